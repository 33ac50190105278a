"""Counter-based Philox4x32-10 generator, vectorized over counters.

Every draw is a pure function of (key, counter), so the k-th step of path i
can be generated without touching any other path.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 block function.

    counter: array (..., 4) of uint32 words; key: two uint32 words.
    Returns an array (..., 4) of uint32.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK
    c0, c1, c2, c3 = (c[..., i] for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _S32, p0 & _MASK
        hi1, lo1 = p1 >> _S32, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, stream: int, index: np.ndarray, step: np.ndarray | int) -> np.ndarray:
    """Two doubles in (0, 1) per (index, step), shape (n, 2).

    The counter words are (step, stream, index low, index high).
    """
    index = np.asarray(index, dtype=np.uint64)
    step = np.broadcast_to(np.asarray(step, dtype=np.uint64), index.shape)
    ctr = np.stack(
        [step & _MASK, np.full(index.shape, stream, dtype=np.uint64),
         index & _MASK, index >> _S32],
        axis=-1,
    )
    w = philox4x32(ctr, seed_key(seed)).astype(np.uint64)
    # 53-bit mantissas from word pairs, shifted off zero
    a = ((w[..., 0] >> np.uint64(5)) << np.uint64(26)) | (w[..., 1] >> np.uint64(6))
    b = ((w[..., 2] >> np.uint64(5)) << np.uint64(26)) | (w[..., 3] >> np.uint64(6))
    scale = 1.0 / 9007199254740992.0
    return np.stack([(a.astype(np.float64) + 0.5) * scale, (b.astype(np.float64) + 0.5) * scale], -1)


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A numpy Generator for non-path work (MCMC, sampling of test inputs),
    seeded deterministically from (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2 ** 64 - 1) | (stream << 64)))
