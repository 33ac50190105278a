"""Functions on boxes and tori in Z^d, convolution, and numerical certificates
for the polynomial convolution inequalities used by the diagram bounds."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import signal


class DimensionMismatch(ValueError):
    pass


class TailNotControlled(RuntimeError):
    pass


class ParameterRegimeUnsupported(ValueError):
    pass


class SingularSymbol(ArithmeticError):
    def __init__(self, k, value):
        super().__init__(f"|D^(k)| = {abs(value):.3e} at k = {k}")
        self.k = k
        self.value = value


TAIL_FRACTION = 0.01
LEVEL_CHUNK = 256


def bracket(norm2):
    """<x> = max(|x|, 1) from squared Euclidean norms."""
    return np.maximum(np.sqrt(np.asarray(norm2, dtype=float)), 1.0)


def box_norm2(d: int, r: int) -> np.ndarray:
    """|x|^2 on the box |x|_inf <= r as a dense array."""
    ax = np.arange(-r, r + 1) ** 2
    out = np.zeros((2 * r + 1,) * d, dtype=np.int64)
    for i in range(d):
        shape = [1] * d
        shape[i] = -1
        out = out + ax.reshape(shape)
    return out


def orbit_reps(d: int, r: int):
    """Sorted-absolute-value representatives of the box |x|_inf <= r, with
    the size of each signed-permutation orbit."""
    reps = np.array(
        list(itertools.combinations_with_replacement(range(r, -1, -1), d)),
        dtype=np.int64,
    )
    eq = reps[:, :, None] == reps[:, None, :]
    run = np.sum(np.tril(eq), axis=2)  # position within its run of equal values
    mult = math.factorial(d) / np.prod(run, axis=1) * 2.0 ** np.count_nonzero(reps, axis=1)
    return reps, mult


def unit_sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def tail_sum_bound(d: int, q: float, r: float) -> float:
    """Upper bound for sum_{|x| > r} |x|^{-q} over Z^d, q > d (Euclidean
    exterior, hence also the sup-norm exterior).

    Each lattice point owns a unit cube; |y| <= |x| + sqrt(d)/2 on that cube
    and the cubes lie outside the ball of radius r - sqrt(d)/2.
    """
    a = math.sqrt(d) / 2
    if q <= d:
        return math.inf
    if r <= a:
        raise ValueError("tail radius too small")
    return (1 + a / r) ** q * unit_sphere_area(d) * (r - a) ** (d - q) / (q - d)


def shifted_tail_bound(d: int, q: float, r: float, shifts) -> float:
    """Bound for sum_{|x| > r} |x|^{q'-q} prod_j <x - v_j>^{-q_j}, sum q_j = q',
    given the list of (|v_j|, q_j); uses |x - v| >= |x|(1 - |v|/r).

    Valid for both the Euclidean and the sup-norm exterior of radius r."""
    factor = 1.0
    for v, qj in shifts:
        if v >= r:
            return math.inf
        factor *= (1 - v / r) ** (-qj)
    return factor * tail_sum_bound(d, q, r)


@dataclass(frozen=True, eq=False)
class LatticeFunction:
    """Real function on the box |x|_inf <= r, with optional decay claim
    |f(x)| <= A <x>^{-p} and an absolute error bound `err` on the values."""

    d: int
    r: int
    values: np.ndarray
    decay: tuple[float, float] | None = None
    err: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (2 * self.r + 1,) * self.d:
            raise ValueError(f"values shape {v.shape} does not fit d={self.d}, r={self.r}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_norm(cls, d: int, r: int, f, decay=None) -> "LatticeFunction":
        """Radial function given as f(|x|^2)."""
        return cls(d, r, f(box_norm2(d, r)), decay)

    @classmethod
    def delta(cls, d: int, r: int = 0, scale: float = 1.0) -> "LatticeFunction":
        v = np.zeros((2 * r + 1,) * d)
        v[(r,) * d] = scale
        return cls(d, r, v)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=np.int64)
        if np.max(np.abs(x)) > self.r:
            return 0.0
        return float(self.values[tuple(x + self.r)])

    def at(self, sites: np.ndarray) -> np.ndarray:
        """Values at many sites (shape (..., d)); zero outside the box."""
        sites = np.asarray(sites, dtype=np.int64)
        inside = np.all(np.abs(sites) <= self.r, axis=-1)
        out = np.zeros(sites.shape[:-1])
        out[inside] = self.values[tuple((sites[inside] + self.r).T)]
        return out

    @property
    def origin(self) -> float:
        return float(self.values[(self.r,) * self.d])

    def sum(self) -> float:
        return float(np.sum(self.values))

    def abs_sum(self) -> float:
        return float(np.sum(np.abs(self.values)))

    def norm2(self) -> np.ndarray:
        return box_norm2(self.d, self.r)

    def restrict(self, r: int) -> "LatticeFunction":
        if r > self.r:
            return self.pad(r)
        sl = (slice(self.r - r, self.r + r + 1),) * self.d
        return LatticeFunction(self.d, r, self.values[sl].copy(), self.decay, self.err)

    def pad(self, r: int) -> "LatticeFunction":
        if r < self.r:
            return self.restrict(r)
        v = np.pad(self.values, r - self.r)
        return LatticeFunction(self.d, r, v, self.decay, self.err)

    def __add__(self, other: "LatticeFunction") -> "LatticeFunction":
        _same_d(self, other)
        r = max(self.r, other.r)
        return LatticeFunction(self.d, r, self.pad(r).values + other.pad(r).values,
                               err=self.err + other.err)

    def scale(self, c: float) -> "LatticeFunction":
        decay = None if self.decay is None else (abs(c) * self.decay[0], self.decay[1])
        return LatticeFunction(self.d, self.r, c * self.values, decay, abs(c) * self.err)

    def check_decay(self) -> float:
        """Smallest A' with |f| <= A' <x>^{-p} on the box (needs decay metadata)."""
        if self.decay is None:
            raise ValueError("no decay metadata")
        p = self.decay[1]
        return float(np.max(np.abs(self.values) * bracket(self.norm2()) ** p))

    def decay_holds(self, rtol: float = 1e-12) -> bool:
        return self.check_decay() <= self.decay[0] * (1 + rtol)

    def symmetry_defect(self) -> float:
        """max |f(Tx) - f(x)| over a generating set of the signed permutations."""
        v = self.values
        worst = float(np.max(np.abs(np.flip(v, 0) - v)))
        for i in range(self.d - 1):
            worst = max(worst, float(np.max(np.abs(np.swapaxes(v, i, i + 1) - v))))
        return worst

    def to_csv(self, path, comment: str | None = None) -> None:
        path = Path(path)
        idx = np.argwhere(np.ones_like(self.values, dtype=bool)) - self.r
        with path.open("w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["d", "r"])
            w.writerow([self.d, self.r])
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["value"])
            for x, val in zip(idx, self.values.ravel()):
                w.writerow([*map(int, x), repr(float(val))])

    @classmethod
    def from_csv(cls, path) -> "LatticeFunction":
        with Path(path).open() as fh:
            rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
        d, r = int(rows[1][0]), int(rows[1][1])
        v = np.zeros((2 * r + 1,) * d)
        for row in rows[3:]:
            x = tuple(int(c) + r for c in row[:d])
            v[x] = float(row[d])
        return cls(d, r, v)


def _same_d(f, g):
    if f.d != g.d:
        raise DimensionMismatch(f"d={f.d} vs d={g.d}")


def convolve(f: LatticeFunction, g: LatticeFunction) -> LatticeFunction:
    """(f*g)(x) = sum_y f(y) g(x-y) over the stored boxes, on |x|_inf <= min(r_f, r_g).

    The error field bounds the mass dropped outside the boxes when both
    inputs carry decay metadata with exponent > d; otherwise it is inf
    unless both inputs are compactly supported within their boxes.
    """
    _same_d(f, g)
    full = signal.convolve(f.values, g.values, mode="full", method="auto")
    r = min(f.r, g.r)
    c = f.r + g.r
    sl = (slice(c - r, c + r + 1),) * f.d
    out = full[sl].copy()
    err = f.err * g.abs_sum() + g.err * f.abs_sum()
    err += _truncation_bound(f, g) + _truncation_bound(g, f)
    return LatticeFunction(f.d, r, out, None, err)


def _truncation_bound(f: LatticeFunction, g: LatticeFunction) -> float:
    """Mass of f outside its box times sup|g|."""
    if f.decay is None:
        return 0.0
    A, p = f.decay
    if A == 0:
        return 0.0
    sup_g = g.decay[0] if g.decay is not None else float(np.max(np.abs(g.values)))
    return A * tail_sum_bound(f.d, p, f.r) * sup_g


# ---------------------------------------------------------------------------
# folded sums: free coordinates kept explicit, the rest summed by |w_perp|^2


def _fold_counts(n: int, R: int) -> np.ndarray:
    """counts[s] = #{w in [-R, R]^n : |w|^2 = s}."""
    one = np.zeros(R * R + 1)
    one[0] = 1
    one[np.arange(1, R + 1) ** 2] = 2
    out = np.array([1.0])
    for _ in range(n):
        out = np.convolve(out, one)
    return out


def _fold_levels(n: int, R: int):
    counts = _fold_counts(n, R)
    s = np.nonzero(counts)[0]
    return s.astype(float), counts[s]


@dataclass
class Certificate:
    """Outcome of a certification scan."""

    name: str
    d: int
    radius: int
    scan_radius: int
    C: float
    argmax: tuple
    at_origin: float
    max_tail_fraction: float
    exponent: float | None = None
    points: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return math.isfinite(self.C) and self.max_tail_fraction < TAIL_FRACTION


def _plane_reps(sr: int):
    return [(a, b) for a in range(sr + 1) for b in range(a + 1)]


def _plane_box(sr: int):
    return [(a, b) for a in range(-sr, sr + 1) for b in range(-sr, sr + 1)]


def _bracket_plane(w1, w2, s):
    return bracket(w1 ** 2 + w2 ** 2 + s)


def certify_hhs1(d: int, scan_radius: int = 4, radius: int = 20, strict: bool = True) -> Certificate:
    """sup over u, v of sum_w <w>^{4-2d}<w-v>^{2-d}<w-u>^{2-d} / (<v>^{2-d}<u>^{2-d}).

    u and v range over the (x1, x2) plane of the scan box; by symmetry u
    runs over the wedge 0 <= u2 <= u1. The other d - 2 coordinates of w are
    folded into |w_perp|^2 levels.
    """
    if d < 5:
        raise ParameterRegimeUnsupported("requires d >= 5")
    R, sr = radius, scan_radius
    s, m = _fold_levels(d - 2, R)
    head_ax = np.arange(-R, R + 1)
    ext_ax = np.arange(-R - sr, R + sr + 1)
    hw1, hw2 = np.meshgrid(head_ax, head_ax, indexing="ij")
    ew1, ew2 = np.meshgrid(ext_ax, ext_ax, indexing="ij")
    q = 4 * d - 8
    reps = _plane_reps(sr)
    nh, ne = 2 * R + 1, 2 * R + 2 * sr + 1
    shape = [sfft.next_fast_len(nh + ne - 1, real=True)] * 2
    heads = {u: np.zeros((ne - nh + 1,) * 2) for u in reps}
    # folded levels in chunks; the FFT of <.>^{2-d} is shared by all u
    for lo in range(0, len(s), LEVEL_CHUNK):
        sc = s[lo: lo + LEVEL_CHUNK, None, None]
        mc = m[lo: lo + LEVEL_CHUNK, None, None]
        base = _bracket_plane(hw1[None], hw2[None], sc) ** (4 - 2 * d) * mc
        B = _bracket_plane(ew1[None], ew2[None], sc) ** (2 - d)
        B_hat = sfft.rfftn(B, s=shape, axes=(1, 2))
        for u in reps:
            Bu = B[:, sr - u[0]: sr - u[0] + nh, sr - u[1]: sr - u[1] + nh]
            prod = np.sum(sfft.rfftn(base * Bu, s=shape, axes=(1, 2)) * B_hat, axis=0)
            full = sfft.irfftn(prod, s=shape)
            heads[u] += full[nh - 1: ne, nh - 1: ne]
    points, best, arg, worst_tail = [], -1.0, None, 0.0
    for u in reps:
        head = heads[u]
        nu = math.hypot(*u)
        for i, v1 in enumerate(range(-sr, sr + 1)):
            for j, v2 in enumerate(range(-sr, sr + 1)):
                nv = math.hypot(v1, v2)
                tail = shifted_tail_bound(d, q, R, [(nu, d - 2), (nv, d - 2)])
                h = float(head[i, j])
                ratio = (h + tail) / (max(nu, 1) ** (2 - d) * max(nv, 1) ** (2 - d))
                frac = tail / h
                worst_tail = max(worst_tail, frac)
                points.append((u, (v1, v2), ratio, frac))
                if ratio > best:
                    best, arg = ratio, (u, (v1, v2))
    origin = [p[2] for p in points if p[0] == (0, 0) and p[1] == (0, 0)][0]
    cert = Certificate("hhs1", d, R, sr, best, arg, origin, worst_tail, None, points)
    if strict and not cert.ok:
        raise TailNotControlled(f"tail fraction {worst_tail:.3g} >= {TAIL_FRACTION}")
    return cert


def hhs2_exponent(a: float, b: float, d: int) -> float:
    if not (a >= b > 0):
        raise ParameterRegimeUnsupported("requires a >= b > 0")
    if a == d:
        raise ParameterRegimeUnsupported("a = d is excluded")
    if a > d:
        return b
    if a + b > d:
        return a + b - d
    raise ParameterRegimeUnsupported("requires a > d or a + b > d")


def _radial_tail(d: int, a: float, b: float, R: int, xn: float) -> float:
    """sum_{|y|_inf > R} <y>^{-a} <x-y>^{-b} <= omega_d int_{R-c}^inf
    rho^{d-1} (rho-c)^{-a} (rho-c-|x|)^{-b} d rho, with c = sqrt(d)/2."""
    from scipy import integrate

    c = math.sqrt(d) / 2
    lo = R - c
    if lo - c - xn <= 1:
        return math.inf
    f = lambda t: t ** (d - 1) * (t - c) ** (-a) * (t - c - xn) ** (-b)
    val, _ = integrate.quad(f, lo, math.inf, limit=200)
    return unit_sphere_area(d) * val


def certify_hhs2(a: float, b: float, d: int, scan_radius: int = 2, radius: int = 20,
                 strict: bool = True) -> Certificate:
    """sup over x of sum_y <y>^{-a}<x-y>^{-b} / <x>^{-e}, e from hhs2_exponent."""
    e = hhs2_exponent(a, b, d)
    R, sr = radius, scan_radius
    s, m = _fold_levels(d - 2, R)
    head_ax = np.arange(-R, R + 1)
    ext_ax = np.arange(-R - sr, R + sr + 1)
    hw1, hw2 = np.meshgrid(head_ax, head_ax, indexing="ij")
    ew1, ew2 = np.meshgrid(ext_ax, ext_ax, indexing="ij")
    P = _bracket_plane(hw1[None], hw2[None], s[:, None, None]) ** (-a) * m[:, None, None]
    B = _bracket_plane(ew1[None], ew2[None], s[:, None, None]) ** (-b)
    head = signal.fftconvolve(P, B, mode="valid", axes=(1, 2)).sum(axis=0)
    points, best, arg, worst_tail = [], -1.0, None, 0.0
    for i, x1 in enumerate(range(-sr, sr + 1)):
        for j, x2 in enumerate(range(-sr, sr + 1)):
            xn = math.hypot(x1, x2)
            tail = _radial_tail(d, a, b, R, xn)
            h = float(head[i, j])
            ratio = (h + tail) / max(xn, 1) ** (-e)
            frac = tail / h
            worst_tail = max(worst_tail, frac)
            points.append(((x1, x2), ratio, frac))
            if ratio > best:
                best, arg = ratio, (x1, x2)
    origin = [p[1] for p in points if p[0] == (0, 0)][0]
    cert = Certificate("hhs2", d, R, sr, best, arg, origin, worst_tail, e, points)
    if strict and not cert.ok:
        raise TailNotControlled(f"tail fraction {worst_tail:.3g} >= {TAIL_FRACTION}")
    return cert


def certify_conv_e(d: int, scan_radius: int = 1, radius: int = 8, strict: bool = True) -> Certificate:
    """sup over u, v, y of
        sum_{a,b} <a-u>^{2-d}<a-y>^{4-2d}<b-a>^{2-d}<b-v>^{4-2d}<b-y>^{2-d}
        / (<y-u>^{2-d}<y-v>^{4-2d}).

    Translating y to 0, u' = u - y and v' = v - y range over the (x1, x2)
    plane of the scan box; v' over the wedge, u' over the full plane box.
    The head is a full d-dimensional FFT convolution on |a|, |b| <= radius.
    """
    if d < 5:
        raise ParameterRegimeUnsupported("requires d >= 5")
    R, sr = radius, scan_radius
    n2 = box_norm2(d, R)
    N = 4 * R + 2
    kr = 2 * R
    kern = bracket(box_norm2(d, kr)) ** (2 - d)
    kern_hat = sfft.rfftn(kern, s=(N,) * d, workers=-1)
    del kern
    q_tail = 3 * d - 6
    coords = np.arange(-R, R + 1)

    def shifted(v, p):
        # <x - v>^{-p} on the box, v in the (x1, x2) plane
        n = n2 - 2 * v[0] * coords.reshape((-1,) + (1,) * (d - 1)) \
            - 2 * v[1] * coords.reshape((1, -1) + (1,) * (d - 2)) + v[0] ** 2 + v[1] ** 2
        return bracket(n) ** (-p)

    base_ay = bracket(n2) ** (4 - 2 * d)
    base_by = bracket(n2) ** (2 - d)
    points, best, arg, worst_tail = [], -1.0, None, 0.0
    for v in _plane_reps(sr):
        Q = shifted(v, 2 * d - 4) * base_by
        KQ = sfft.irfftn(sfft.rfftn(Q, s=(N,) * d, workers=-1) * kern_hat, s=(N,) * d, workers=-1)
        KQ = KQ[(slice(2 * R, 4 * R + 1),) * d]
        nv = math.hypot(*v)
        q_sum = float(Q.sum())
        tail_q = shifted_tail_bound(d, q_tail, R, [(nv, 2 * d - 4)])
        far_q = shifted_tail_bound(d, q_tail + d - 2, R, [(nv, 2 * d - 4)])
        outer = n2 > (R / 2) ** 2
        ball_q = float(Q[outer].sum()) + tail_q
        for u in _plane_box(sr):
            P = shifted(u, d - 2) * base_ay
            head = float(np.sum(P * KQ))
            nu = math.hypot(*u)
            tail_p = shifted_tail_bound(d, q_tail, R, [(nu, d - 2)])
            far_p = shifted_tail_bound(d, q_tail + d - 2, R, [(nu, d - 2)])
            ball_p = float(P[outer].sum()) + tail_p
            p_sum = float(P.sum())
            # a outside: K(b - a) <= (|a|/2)^{2-d} when |b| <= R/2, else <= 1
            tail = 2 ** (d - 2) * (q_sum + tail_q) * far_p + tail_p * ball_q
            # a inside, b outside: same split with the roles swapped
            tail += 2 ** (d - 2) * (p_sum + tail_p) * far_q + tail_q * ball_p
            ratio = (head + tail) / (max(nu, 1) ** (2 - d) * max(nv, 1) ** (4 - 2 * d))
            frac = tail / head
            worst_tail = max(worst_tail, frac)
            points.append((u, v, ratio, frac))
            if ratio > best:
                best, arg = ratio, (u, v)
    origin = [p[2] for p in points if p[0] == (0, 0) and p[1] == (0, 0)][0]
    cert = Certificate("conv_e", d, R, sr, best, arg, origin, worst_tail, None, points)
    if strict and not cert.ok:
        raise TailNotControlled(f"tail fraction {worst_tail:.3g} >= {TAIL_FRACTION}")
    return cert


# ---------------------------------------------------------------------------
# tori


@dataclass(frozen=True, eq=False)
class TorusFunction:
    """Function on (Z/LZ)^d.

    With even=True only the block [0, L/2]^d is stored and the function is
    even in every coordinate; transforms are then real DCT-I.
    """

    d: int
    L: int
    values: np.ndarray
    even: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float if self.even else complex)
        if self.even:
            if self.L % 2:
                raise ValueError("even mode needs an even side")
            shape = (self.L // 2 + 1,) * self.d
        else:
            shape = (self.L,) * self.d
        if v.shape != shape:
            raise ValueError(f"values shape {v.shape}, expected {shape}")
        if not self.even and np.allclose(v.imag, 0):
            v = v.real.copy()
        object.__setattr__(self, "values", v)

    def fourier(self) -> np.ndarray:
        """f^(k) = sum_x f(x) e^{ik.x}, at k = 2 pi j / L (j in [0, L/2] when even)."""
        if self.even:
            return sfft.dctn(self.values, type=1, workers=-1)
        return sfft.fftn(self.values, workers=-1)

    @classmethod
    def from_fourier(cls, coeffs: np.ndarray, d: int, L: int, even: bool = True) -> "TorusFunction":
        if even:
            return cls(d, L, sfft.idctn(coeffs, type=1, workers=-1), True)
        return cls(d, L, sfft.ifftn(coeffs, workers=-1), False)

    def momenta(self) -> np.ndarray:
        """Per-axis momentum values matching fourier()."""
        if self.even:
            return 2 * np.pi * np.arange(self.L // 2 + 1) / self.L
        return 2 * np.pi * np.fft.fftfreq(self.L)

    @classmethod
    def from_lattice(cls, f: LatticeFunction, L: int, even: bool = True) -> "TorusFunction":
        if 2 * f.r >= L:
            raise ValueError("box does not fit on the torus without overlap")
        if even:
            h = L // 2
            v = np.zeros((h + 1,) * f.d)
            v[(slice(0, f.r + 1),) * f.d] = f.values[(slice(f.r, None),) * f.d]
            return cls(f.d, L, v, True)
        v = np.zeros((L,) * f.d)
        idx = np.arange(-f.r, f.r + 1) % L
        v[np.ix_(*[idx] * f.d)] = f.values
        return cls(f.d, L, v, False)

    def at(self, sites: np.ndarray) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64) % self.L
        if self.even:
            sites = np.minimum(sites, self.L - sites)
        return self.values[tuple(sites.T)] if sites.ndim == 2 else self.values[tuple(sites)]

    def to_lattice(self, r: int) -> LatticeFunction:
        if r > self.L // 2:
            raise ValueError("radius exceeds half the side")
        ax = np.arange(-r, r + 1) % self.L
        if self.even:
            ax = np.minimum(ax, self.L - ax)
            return LatticeFunction(self.d, r, self.values[np.ix_(*[ax] * self.d)])
        return LatticeFunction(self.d, r, np.real(self.values[np.ix_(*[ax] * self.d)]))

    def roundtrip_error(self) -> float:
        back = self.from_fourier(self.fourier(), self.d, self.L, self.even).values
        scale = max(float(np.max(np.abs(self.values))), 1e-300)
        return float(np.max(np.abs(back - self.values))) / scale

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d", "L"])
            w.writerow([self.d, self.L])
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["value"])
            for x in np.ndindex(*self.values.shape):
                w.writerow([*x, repr(float(np.real(self.values[x])))])


def torus_convolve(f: TorusFunction, g: TorusFunction) -> TorusFunction:
    if (f.d, f.L, f.even) != (g.d, g.L, g.even):
        raise DimensionMismatch("tori differ")
    return TorusFunction.from_fourier(f.fourier() * g.fourier(), f.d, f.L, f.even)


def torus_deconvolve(D: TorusFunction, tol: float = 1e-12):
    """Solve D*H = -delta on the torus by H^ = -1/D^.

    Returns (H, residual) with residual = sup |D*H + delta| recomputed from
    the returned H.
    """
    Dh = D.fourier()
    small = np.abs(Dh) < tol
    if np.any(small):
        k = tuple(int(i) for i in np.argwhere(small)[0])
        raise SingularSymbol(k, Dh[k])
    H = TorusFunction.from_fourier(-1.0 / Dh, D.d, D.L, D.even)
    return H, torus_residual(D, H)


def torus_residual(D: TorusFunction, H: TorusFunction) -> float:
    r = torus_convolve(D, H).values.copy()
    r[(0,) * D.d] += 1.0
    return float(np.max(np.abs(r)))


def stencil_residual(D: LatticeFunction, H: TorusFunction, sites: np.ndarray) -> np.ndarray:
    """(D*H)(x) + delta(x) in real space at the given sites, summing over the
    nonzero entries of the finitely supported D."""
    nz = np.argwhere(D.values != 0)
    vals = D.values[tuple(nz.T)]
    offs = nz - D.r
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    out = np.zeros(len(sites))
    chunk = max(1, 2_000_000 // max(len(offs), 1))
    for i in range(0, len(sites), chunk):
        x = sites[i: i + chunk]
        hv = H.at((x[:, None, :] - offs[None, :, :]).reshape(-1, D.d)).reshape(len(x), len(offs))
        out[i: i + chunk] = hv @ vals
    out[np.all(sites == 0, axis=1)] += 1.0
    return out
