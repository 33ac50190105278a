"""Run the acceptance criteria and print one line per criterion.

    python3 scripts/run_acceptance.py [-k c07]
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    args = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    sys.exit(pytest.main(args + sys.argv[1:]))
