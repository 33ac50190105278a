"""Jump kernels on Z^d and finite volumes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class KernelError(ValueError):
    """Base class for kernel validation failures."""


class NegativeRate(KernelError):
    pass


class NotSymmetric(KernelError):
    pass


class NotGenerating(KernelError):
    pass


class EmptySupport(KernelError):
    pass


@lru_cache(maxsize=None)
def signed_permutations(d: int) -> np.ndarray:
    """All 2^d * d! signed permutation matrices, shape (2^d d!, d, d)."""
    mats = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            m = np.zeros((d, d), dtype=np.int64)
            for i, (j, s) in enumerate(zip(perm, signs)):
                m[i, j] = s
            mats.append(m)
    return np.array(mats)


def symmetry_orbit(d: int, x: Iterable[int]) -> set[tuple[int, ...]]:
    """Orbit of x under the signed permutation group."""
    x = tuple(int(v) for v in x)
    if len(x) != d:
        raise ValueError(f"site {x} is not in Z^{d}")
    out = set()
    for perm in set(itertools.permutations(x)):
        nz = [i for i, v in enumerate(perm) if v != 0]
        for signs in itertools.product((1, -1), repeat=len(nz)):
            y = list(perm)
            for i, s in zip(nz, signs):
                y[i] = s * abs(y[i])
            out.add(tuple(y))
    return out


def canonical_site(x) -> tuple[int, ...]:
    """Orbit representative: sorted absolute values, largest first."""
    return tuple(sorted((abs(int(v)) for v in x), reverse=True))


def lattice_index(vectors: np.ndarray) -> int:
    """Index of the integer lattice spanned by the rows in Z^d (0 if rank < d).

    Row-reduces to Hermite form with exact integer arithmetic.
    """
    rows = [[int(v) for v in r] for r in np.asarray(vectors)]
    if not rows:
        return 0
    d = len(rows[0])
    det = 1
    pivot = 0
    for col in range(d):
        while True:
            live = [r for r in range(pivot, len(rows)) if rows[r][col] != 0]
            if not live:
                return 0
            best = min(live, key=lambda r: abs(rows[r][col]))
            rows[pivot], rows[best] = rows[best], rows[pivot]
            p = rows[pivot][col]
            done = True
            for r in range(pivot + 1, len(rows)):
                q = rows[r][col] // p
                if q:
                    rows[r] = [a - q * b for a, b in zip(rows[r], rows[pivot])]
                if rows[r][col] != 0:
                    done = False
            if done:
                break
        det *= abs(rows[pivot][col])
        pivot += 1
    return det


@dataclass(frozen=True, eq=False)
class JumpKernel:
    """Finite-range symmetric jump rates J(x), x != 0.

    `sites` and `rates` list the support of J_+; J(0) = -hatJ is implicit.
    """

    d: int
    sites: np.ndarray
    rates: np.ndarray
    name: str = "custom"
    _lookup: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._lookup:
            self._lookup.update(
                {tuple(int(v) for v in s): float(r) for s, r in zip(self.sites, self.rates)}
            )

    @property
    def hatJ(self) -> float:
        return float(np.sum(self.rates))

    @property
    def J0(self) -> float:
        return -self.hatJ

    @property
    def range(self) -> int:
        """Largest sup-norm of a support vector; J(x) = 0 beyond it."""
        return int(np.max(np.abs(self.sites)))

    @property
    def probs(self) -> np.ndarray:
        return self.rates / self.hatJ

    @property
    def second_moment(self) -> float:
        """sigma^2 = sum_x J_+(x) x_1^2, so hatJ - J_+^(k) ~ sigma^2 |k|^2 / 2."""
        return float(np.sum(self.rates * self.sites[:, 0] ** 2))

    def __call__(self, x) -> float:
        x = tuple(int(v) for v in x)
        if not any(x):
            return self.J0
        return self._lookup.get(x, 0.0)

    def jplus_array(self, radius: int) -> np.ndarray:
        """J_+ as a dense array on the box |x|_inf <= radius (centre at index radius)."""
        if radius < self.range:
            raise ValueError("box too small for the kernel range")
        arr = np.zeros((2 * radius + 1,) * self.d)
        idx = tuple((self.sites + radius).T)
        arr[idx] = self.rates
        return arr

    def symbol(self, k: np.ndarray) -> np.ndarray:
        """Fourier transform J_+^(k) = sum_x J_+(x) cos(k.x) for k of shape (..., d)."""
        k = np.asarray(k, dtype=float)
        R = self.range
        if len(self.sites) == (2 * R + 1) ** self.d - 1 and np.all(self.rates == self.rates[0]):
            # equal rates on the full cube: a product of Dirichlet kernels
            axis = 1 + 2 * sum(np.cos(j * k) for j in range(1, R + 1))
            return self.rates[0] * (np.prod(axis, axis=-1) - 1)
        flat = k.reshape(-1, self.d)
        out = np.empty(len(flat))
        step = max(1, 4_000_000 // len(self.sites))
        sites = self.sites.T.astype(float)
        for i in range(0, len(flat), step):
            out[i: i + step] = np.cos(flat[i: i + step] @ sites) @ self.rates
        return out.reshape(k.shape[:-1])


def validate_kernel(d: int, raw_rates: Mapping, name: str = "custom") -> JumpKernel:
    """Check (J1)-(J4) and build a kernel from a map site -> rate."""
    items = []
    for x, r in raw_rates.items():
        x = tuple(int(v) for v in np.atleast_1d(x))
        if len(x) != d:
            raise KernelError(f"site {x} has wrong dimension (d={d})")
        if not any(x):
            raise KernelError("rate at the origin is implicit; give only x != 0")
        r = float(r)
        if r < 0:
            raise NegativeRate(f"(J1) rate {r} at {x} is negative")
        if r > 0:
            items.append((x, r))
    if not items:
        raise EmptySupport("(J2) kernel has empty support")
    lookup = dict(items)
    for x, r in items:
        for y in symmetry_orbit(d, x):
            if lookup.get(y, 0.0) != r:
                raise NotSymmetric(
                    f"(J3) J{x} = {r} but J{y} = {lookup.get(y, 0.0)}"
                )
    sites = np.array([x for x, _ in items], dtype=np.int64)
    if lattice_index(sites) != 1:
        raise NotGenerating("(J2) support does not generate Z^d")
    rates = np.array([r for _, r in items])
    order = np.lexsort(sites.T[::-1])
    return JumpKernel(d, sites[order], rates[order], name=name)


def nearest_neighbour(d: int, rate: float = 1.0) -> JumpKernel:
    raw = {}
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            raw[tuple(e)] = rate
    return validate_kernel(d, raw, name="nn")


def range2(d: int, rate: float = 1.0) -> JumpKernel:
    raw = {
        x: rate
        for x in itertools.product(range(-2, 3), repeat=d)
        if any(x)
    }
    return validate_kernel(d, raw, name="range2")


BUILTIN = {"nn": nearest_neighbour, "range2": range2}


def parse_kernel_text(text: str) -> JumpKernel:
    d = None
    raw = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("d="):
            d = int(line[2:])
            continue
        if d is None:
            raise KernelError("kernel file must start with d=<int>")
        parts = line.split()
        if len(parts) != d + 1:
            raise KernelError(f"expected {d} coordinates and a rate: {line!r}")
        raw[tuple(int(p) for p in parts[:d])] = float(parts[d])
    if d is None:
        raise KernelError("kernel file has no d=<int> line")
    return validate_kernel(d, raw)


def load_kernel(spec: str, d: int | None = None) -> JumpKernel:
    """Built-in name (`nn`, `range2`, needs d) or path to a kernel file."""
    if spec in BUILTIN:
        if d is None:
            raise KernelError(f"built-in kernel {spec!r} needs a dimension")
        return BUILTIN[spec](d)
    path = Path(spec)
    if not path.is_file():
        raise FileNotFoundError(f"kernel file {spec!r} not found")
    return parse_kernel_text(path.read_text())


def kernel_to_text(kernel: JumpKernel) -> str:
    lines = [f"d={kernel.d}"]
    for s, r in zip(kernel.sites, kernel.rates):
        lines.append(" ".join(str(int(v)) for v in s) + f" {float(r)!r}")
    return "\n".join(lines) + "\n"


class Volume:
    """A finite set of sites with a fixed row order."""

    def __init__(self, sites):
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if sites.size == 0:
            raise ValueError("volume must be nonempty")
        keys = [tuple(int(v) for v in s) for s in sites]
        if len(set(keys)) != len(keys):
            raise ValueError("volume sites must be distinct")
        self.sites = sites
        self.sites.setflags(write=False)
        self.d = sites.shape[1]
        self.index = {k: i for i, k in enumerate(keys)}
        self._lo = sites.min(axis=0)
        shape = tuple(sites.max(axis=0) - self._lo + 1)
        self._grid = np.full(shape, -1, dtype=np.int64)
        self._grid[tuple((sites - self._lo).T)] = np.arange(len(sites))

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, x) -> bool:
        return tuple(int(v) for v in x) in self.index

    def __repr__(self) -> str:
        return f"Volume(d={self.d}, n={len(self)})"

    def lookup(self, x: np.ndarray) -> np.ndarray:
        """Row index of each site in x (shape (..., d)); -1 for sites outside."""
        x = np.asarray(x, dtype=np.int64)
        rel = x - self._lo
        shape = np.array(self._grid.shape)
        inside = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(x.shape[:-1], -1, dtype=np.int64)
        if np.any(inside):
            out[inside] = self._grid[tuple(rel[inside].T)]
        return out

    def prefix(self, n: int) -> "Volume":
        return Volume(self.sites[:n])

    @classmethod
    def box(cls, d: int, side: int) -> "Volume":
        """Cube of the given side, centred at the origin (lower-left for even sides)."""
        lo = -(side // 2)
        axes = [np.arange(lo, lo + side)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return cls(grid)


def generator_matrix(kernel: JumpKernel, volume: Volume) -> np.ndarray:
    """Dense matrix Delta^Lambda with entries J(y - x), x, y in the volume."""
    n = len(volume)
    m = np.zeros((n, n))
    m[np.arange(n), np.arange(n)] = kernel.J0
    rows = np.arange(n)
    for y, r in zip(kernel.sites, kernel.rates):
        cols = volume.lookup(volume.sites + y)
        ok = cols >= 0
        m[rows[ok], cols[ok]] = r
    return m
