import pytest
from click.testing import CliRunner

from lacelab.cli import ConfigError, load_config, main


def invoke(tmp_path, *args, out="out"):
    res = CliRunner().invoke(main, [*args, "--out", str(tmp_path / out)])
    return res, tmp_path / out


def read(path):
    return path.read_text().splitlines()


def test_kernel_info(tmp_path):
    res, out = invoke(tmp_path, "kernel-info", "--kernel", "range2", "--d", "2")
    assert res.exit_code == 0, res.output
    lines = read(out / "summary.csv")
    assert lines[0].startswith("# lacelab kernel-info config_hash=")
    assert "hatJ,24.0,0.0" in lines
    assert read(out / "report.txt")[-1] == "RESULT PASS"


def test_green_mc_reproducible(tmp_path):
    args = ["green-mc", "--d", "1", "--box", "5", "--nu", "0.3", "--samples", "20000", "--seed", "7"]
    r1, o1 = invoke(tmp_path, *args, out="a")
    r2, o2 = invoke(tmp_path, *args, "--threads", "2", out="b")
    assert r1.exit_code == 0 and r2.exit_code == 0, r1.output
    assert (o1 / "green.csv").read_bytes() == (o2 / "green.csv").read_bytes()
    r3, o3 = invoke(tmp_path, *args[:-1], "8", out="c")
    assert (o1 / "green.csv").read_bytes() != (o3 / "green.csv").read_bytes()


def test_dynkin_check(tmp_path):
    res, out = invoke(tmp_path, "dynkin-check", "--model", "phi4", "--d", "1", "--box", "2",
                      "--g", "0.1", "--nu", "0.5", "--samples", "20000")
    assert res.exit_code == 0, res.output
    assert len(read(out / "dynkin.csv")) == 4


def test_verify_conv(tmp_path):
    cfg = tmp_path / "conv.toml"
    cfg.write_text("[kernel]\nd = 5\n[verify-conv]\nradius = 20\n")
    res, out = invoke(tmp_path, "verify-conv", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    names = [line.split(",")[0] for line in read(out / "certificates.csv")[2:]]
    assert len(names) == 3


def test_failed_check_exits_one(tmp_path):
    cfg = tmp_path / "scan.toml"
    cfg.write_text("[critical-scan]\nsides = [3]\nnu_grid = [0.5, 0.4]\n")
    res, out = invoke(tmp_path, "critical-scan", "--config", str(cfg), "--g", "0.05",
                      "--samples", "300")
    assert res.exit_code == 1
    assert any(line.startswith("FAIL error BracketNotFound") for line in read(out / "report.txt"))


@pytest.mark.parametrize("text", [
    "[model]\ncolour = 1\n",
    "[nonsense]\na = 1\n",
    "[model]\nname = 'ising'\n",
    "[model]\nn = 3\n",
    "[model]\ng = -0.1\n",
    "[run]\nsamples = 'many'\n",
    "[model\n",
])
def test_config_errors_exit_two(tmp_path, text):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text)
    res, _ = invoke(tmp_path, "kernel-info", "--config", str(cfg))
    assert res.exit_code == 2
    assert "config error" in res.output


def test_missing_config_file(tmp_path):
    res, _ = invoke(tmp_path, "kernel-info", "--config", str(tmp_path / "none.toml"))
    assert res.exit_code == 2


def test_hash_ignores_output_and_threads():
    a = load_config(None, {"run": {"output": "x", "threads": 1}})
    b = load_config(None, {"run": {"output": "y", "threads": 4}})
    c = load_config(None, {"run": {"seed": 3}})
    assert a.hash == b.hash != c.hash
    with pytest.raises(ConfigError):
        load_config(None, {"run": {"samples": 1}})
