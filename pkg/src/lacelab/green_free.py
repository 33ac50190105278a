"""Free Green's functions: finite-volume inverses, infinite-volume S, the
tilted S_z, and the asymptotic constant."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .kernel import JumpKernel, Volume, generator_matrix
from .lattice_field import LatticeFunction, orbit_reps


class NotPositiveDefinite(linalg.LinAlgError):
    pass


class MethodDisagreement(RuntimeError):
    pass


class ZOutOfRange(ValueError):
    pass


class PoorFit(RuntimeError):
    pass


DEFAULT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FreeGreenFinite:
    volume: Volume
    matrix: np.ndarray
    minus_delta: np.ndarray = field(repr=False)

    def __call__(self, a, b) -> float:
        return float(self.matrix[self.volume.index[tuple(a)], self.volume.index[tuple(b)]])

    def residual(self) -> float:
        """sup-norm of (-Delta^Lambda) S^Lambda - I."""
        n = len(self.volume)
        return float(np.max(np.abs(self.minus_delta @ self.matrix - np.eye(n))))


def free_green_finite(kernel: JumpKernel, volume: Volume) -> FreeGreenFinite:
    """S^Lambda = (-Delta^Lambda)^{-1} by Cholesky."""
    a = -generator_matrix(kernel, volume)
    try:
        c = linalg.cho_factor(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite("-Delta^Lambda is not positive definite") from exc
    s = linalg.cho_solve(c, np.eye(len(volume)))
    s = 0.5 * (s + s.T)
    return FreeGreenFinite(volume, s, a)


def resolvent(kernel: JumpKernel, volume: Volume, nu: float) -> np.ndarray:
    """(-Delta^Lambda + nu)^{-1}."""
    a = -generator_matrix(kernel, volume) + nu * np.eye(len(volume))
    s = linalg.cho_solve(linalg.cho_factor(a, lower=True), np.eye(len(volume)))
    return 0.5 * (s + s.T)


# ---------------------------------------------------------------------------
# pointwise evaluation of the infinite-volume functions


def _gl_panels(lo: float, hi: float, panels: int, order: int):
    """Gauss-Legendre nodes/weights on [lo, hi] split into equal panels."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def _lclt_tail(d: int, var: float, norm2: np.ndarray, T: float) -> np.ndarray:
    """int_T^inf (2 pi var t)^{-d/2} exp(-|x|^2 / (2 var t)) dt."""
    c = norm2 / (2 * var)
    a = d / 2 - 1
    pre = (2 * np.pi * var) ** (-d / 2)
    out = np.empty(norm2.shape, dtype=float)
    zero = c == 0
    out[zero] = pre * T ** (-a) / a
    cz = c[~zero]
    out[~zero] = pre * cz ** (-a) * special.gamma(a) * special.gammainc(a, cz / T)
    return out


def is_nearest_neighbour(kernel: JumpKernel) -> bool:
    return (
        len(kernel.sites) == 2 * kernel.d
        and np.all(np.sum(np.abs(kernel.sites), axis=1) == 1)
        and np.all(kernel.rates == kernel.rates[0])
    )


def cube_radius(kernel: JumpKernel) -> int | None:
    """R if the kernel has equal rates on all of {-R..R}^d minus the origin."""
    R = kernel.range
    if len(kernel.sites) != (2 * R + 1) ** kernel.d - 1:
        return None
    if not np.all(kernel.rates == kernel.rates[0]):
        return None
    return R


NN_PANELS, NN_ORDER = 60, 16


def _nn_tilted(kernel: JumpKernel, zeta: float, sites: np.ndarray, T: float = 1e7) -> np.ndarray:
    """sum_n zeta^n J_+^{*n}(x) = int_0^inf e^{-(1 - zeta hatJ) t} prod_i I_{x_i}(2 zeta r t) e^{-2 zeta r t} dt
    for the nearest-neighbour kernel with rate r, by Gauss-Legendre panels in log t."""
    d, r = kernel.d, float(kernel.rates[0])
    alpha = 1.0 - zeta * kernel.hatJ
    t0 = 1e-10
    u, w = _gl_panels(math.log(t0), math.log(T), NN_PANELS, NN_ORDER)
    t = np.exp(u)
    x = np.abs(np.atleast_2d(sites)).astype(float)
    out = np.zeros(len(x))
    damp = np.exp(-alpha * t) * t * w
    for i in range(0, len(x), 256):
        xs = x[i: i + 256]
        prod = np.ones((len(xs), len(t)))
        for j in range(d):
            prod *= special.ive(xs[:, j: j + 1], 2 * zeta * r * t[None, :])
        out[i: i + 256] = prod @ damp
    # Gaussian tail beyond T in the walk time s = zeta r t, variance 2 per axis
    norm2 = np.sum(x ** 2, axis=1)
    tail = _lclt_tail(d, 2.0, norm2, zeta * r * T) / (zeta * r)
    # the walk has not moved before t0
    head = np.where(norm2 == 0, t0, 0.0)
    return out + head + math.exp(-alpha * T) * tail


def _one_d_powers(R: int, N: int, cols: int) -> np.ndarray:
    """u_n(y) for the uniform law on {-R..R}, n = 0..N, y = 0..cols-1."""
    width = R * N
    cur = np.zeros(2 * width + 1)
    cur[width] = 1.0
    out = np.zeros((N + 1, cols))
    out[0, :] = cur[width: width + cols]
    for n in range(1, N + 1):
        nxt = np.zeros_like(cur)
        for s in range(-R, R + 1):
            if s >= 0:
                nxt[s:] += cur[: len(cur) - s]
            else:
                nxt[:s] += cur[-s:]
        cur = nxt / (2 * R + 1)
        out[n, :] = cur[width: width + cols]
    return out


def _cube_tilted(kernel: JumpKernel, zeta: float, sites: np.ndarray, N: int = 4000) -> np.ndarray:
    """Series for cube kernels: J_+ = c((2R+1)^d U - delta), U a product of
    uniform laws, so 1/(1 - zeta J_+^) = (1 + zeta c)^{-1} sum_n rho^n U^n with
    rho = zeta c (2R+1)^d / (1 + zeta c)."""
    d, R, c = kernel.d, cube_radius(kernel), float(kernel.rates[0])
    lam = c * (2 * R + 1) ** d
    rho = zeta * lam / (1 + zeta * c)
    x = np.abs(np.atleast_2d(sites))
    cols = int(x.max()) + 1
    U = _one_d_powers(R, N, cols)
    geo = rho ** np.arange(N + 1)
    out = np.zeros(len(x))
    for i in range(0, len(x), 512):
        xs = x[i: i + 512]
        prod = np.ones((len(xs), N + 1))
        for j in range(d):
            prod *= U[:, xs[:, j]].T
        out[i: i + 512] = prod @ geo
    var = R * (R + 1) / 3
    tail = _lclt_tail(d, var, np.sum(x.astype(float) ** 2, axis=1), N + 0.5)
    return (out + rho ** N * tail) / (1 + zeta * c)


class _FourierQuadrature:
    """pi^{-d} int_{[0,pi]^d} prod_i cos(k_i x_i) f(k) dk for integrands with an
    |k|^{-2} singularity at 0: dyadic shells down to level `levels`, product
    Gauss-Legendre of `order` per cell, and a quadratic-form model inside the
    innermost cube."""

    def __init__(self, d: int, levels: int = 12, order: int = 8):
        self.d, self.levels, self.order = d, levels, order
        x, w = np.polynomial.legendre.leggauss(order)
        self.x01 = 0.5 * (x + 1)
        self.w01 = 0.5 * w
        # unit shell [0,1]^d minus [0,1/2]^d as 2^d - 1 cells of side 1/2
        nodes, weights = [], []
        for corner in np.ndindex(*(2,) * d):
            if not any(corner):
                continue
            grids = [0.5 * (c + self.x01) for c in corner]
            g = np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, d)
            wg = np.ones(len(g)) * (0.5 ** d)
            ww = np.meshgrid(*[self.w01] * d, indexing="ij")
            wg = wg * np.prod(np.stack(ww, -1).reshape(-1, d), axis=1)
            nodes.append(g)
            weights.append(wg)
        self.shell_nodes = np.concatenate(nodes)
        self.shell_weights = np.concatenate(weights)
        shell_int = float(self.shell_weights @ (1.0 / np.sum(self.shell_nodes ** 2, axis=1)))
        self.inner_const = shell_int / (1 - 2.0 ** (2 - d))

    def integrate(self, f, sites: np.ndarray, sigma2: float) -> np.ndarray:
        """f maps k of shape (n, d) to values; sigma2 is the quadratic-form
        coefficient with f(k) ~ 2/(sigma2 |k|^2) as k -> 0."""
        d = self.d
        sites = np.atleast_2d(sites).astype(float)
        total = np.zeros(len(sites))
        for j in range(self.levels + 1):
            scale = np.pi * 2.0 ** (-j)
            k = self.shell_nodes * scale
            w = self.shell_weights * scale ** d
            fw = f(k) * w
            for i in range(0, len(sites), 8):
                s = sites[i: i + 8]
                ph = np.ones((len(s), len(k)))
                for a in range(d):
                    ph *= np.cos(s[:, a: a + 1] * k[None, :, a])
                total[i: i + 8] += ph @ fw
        eps = np.pi * 2.0 ** (-self.levels - 1)
        total += eps ** (d - 2) * self.inner_const * 2.0 / sigma2
        return total / np.pi ** d


def fourier_tilted(kernel: JumpKernel, zeta: float, sites: np.ndarray,
                   levels: int = 12, order: int = 8) -> np.ndarray:
    """sum_n zeta^n J_+^{*n}(x) from its Fourier integral. At zeta = 1/hatJ this
    is hatJ S(x); the inner-cube model assumes the critical singularity."""
    q = _FourierQuadrature(kernel.d, levels, order)
    f = lambda k: 1.0 / (1.0 - zeta * kernel.symbol(k))
    return q.integrate(f, sites, zeta * kernel.second_moment)


def tilted_at(kernel: JumpKernel, zeta: float, sites: np.ndarray) -> np.ndarray:
    """Primary evaluator of S_zeta at the given sites."""
    if not 0 <= zeta <= 1 / kernel.hatJ * (1 + 1e-15):
        raise ZOutOfRange(f"z = {zeta} outside [0, 1/hatJ]")
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    if zeta == 0:
        return np.all(sites == 0, axis=1).astype(float)
    if is_nearest_neighbour(kernel):
        return _nn_tilted(kernel, zeta, sites)
    if cube_radius(kernel) is not None:
        return _cube_tilted(kernel, zeta, sites)
    if kernel.d < 3 or zeta < 1 / kernel.hatJ:
        raise NotImplementedError("series route only for nearest-neighbour and cube kernels")
    return fourier_tilted(kernel, zeta, sites)


def free_green_at(kernel: JumpKernel, sites: np.ndarray) -> np.ndarray:
    """Infinite-volume S at arbitrary sites (d >= 3)."""
    if kernel.d < 3:
        raise ValueError("S is infinite for d <= 2")
    return tilted_at(kernel, 1 / kernel.hatJ, sites) / kernel.hatJ


def series_method(kernel: JumpKernel) -> str:
    if is_nearest_neighbour(kernel) or cube_radius(kernel) is not None:
        return "series"
    return "fourier"


def _fill_box(d: int, r: int, reps: np.ndarray, rep_vals: np.ndarray) -> np.ndarray:
    """Dense array on |x|_inf <= r from values at sorted-abs representatives."""
    base = r + 1
    weights = base ** np.arange(d - 1, -1, -1)
    rep_keys = reps @ weights
    order = np.argsort(rep_keys)
    ax = np.abs(np.arange(-r, r + 1))
    grid = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), -1).reshape(-1, d)
    grid = -np.sort(-grid, axis=1)
    keys = grid @ weights
    pos = order[np.searchsorted(rep_keys[order], keys)]
    return rep_vals[pos].reshape((2 * r + 1,) * d)


@dataclass(frozen=True, eq=False)
class FreeGreenInfinite:
    S: LatticeFunction
    kernel: JumpKernel
    method: str
    cross_check: float | None = None

    def __call__(self, x) -> float:
        return self.S(x)


def free_green_infinite(kernel: JumpKernel, radius: int, tol: float = DEFAULT_TOL,
                        check_radius: int = 1) -> FreeGreenInfinite:
    """S on the box |x|_inf <= radius, filled from orbit representatives.

    The series route is cross-checked against the Fourier integral at the
    representatives with |x|_inf <= check_radius.
    """
    reps, _ = orbit_reps(kernel.d, radius)
    method = series_method(kernel)
    vals = free_green_at(kernel, reps) if method == "series" else \
        fourier_tilted(kernel, 1 / kernel.hatJ, reps) / kernel.hatJ
    diff = None
    if method == "series" and check_radius >= 0:
        near = reps[reps[:, 0] <= check_radius]
        four = fourier_tilted(kernel, 1 / kernel.hatJ, near) / kernel.hatJ
        diff = float(np.max(np.abs(four - vals[reps[:, 0] <= check_radius])))
        if diff > 10 * tol:
            raise MethodDisagreement(f"series and Fourier differ by {diff:.3e}")
    S = LatticeFunction(kernel.d, radius, _fill_box(kernel.d, radius, reps, vals), err=tol)
    return FreeGreenInfinite(S, kernel, method, diff)


def tilted_green(kernel: JumpKernel, z: float, radius: int) -> LatticeFunction:
    """S_z = sum_n (z J_+)^{*n} on |x|_inf <= radius."""
    if not 0 <= z <= 1 / kernel.hatJ * (1 + 1e-15):
        raise ZOutOfRange(f"z = {z} outside [0, 1/hatJ]")
    reps, _ = orbit_reps(kernel.d, radius)
    vals = tilted_at(kernel, z, reps)
    return LatticeFunction(kernel.d, radius, _fill_box(kernel.d, radius, reps, vals))


def d_tilted(kernel: JumpKernel, z: float, radius: int | None = None) -> LatticeFunction:
    """D^{S_z} = -delta + z J_+."""
    r = kernel.range if radius is None else radius
    v = z * kernel.jplus_array(r)
    v[(r,) * kernel.d] -= 1.0
    return LatticeFunction(kernel.d, r, v)


def direction_set(d: int) -> list[np.ndarray]:
    """e1, e1+e2, ..., e1+...+ed."""
    return [np.array([1] * k + [0] * (d - k)) for k in range(1, d + 1)]


@dataclass
class AsymptoticFit:
    C: float
    spread: float
    per_direction: dict
    radii: tuple

    @property
    def ok(self) -> bool:
        return self.spread <= 0.05


def fit_plateau(values: np.ndarray, norms: np.ndarray, d: int):
    """Least squares for f |x|^{d-2} = C + A |x|^{-2}; returns (C, A)."""
    y = values * norms ** (d - 2)
    X = np.stack([np.ones_like(norms), norms ** -2.0], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[0]), float(coef[1])


def asymptotic_constant(kernel: JumpKernel, rmin: float = 15, rmax: float = 30,
                        evaluator=None, strict: bool = True) -> AsymptoticFit:
    """Fit S(x)|x|^{d-2} along lattice directions for rmin <= |x| <= rmax."""
    d = kernel.d
    ev = evaluator or (lambda s: free_green_at(kernel, s))
    per = {}
    for u in direction_set(d):
        step = math.sqrt(float(u @ u))
        ks = np.arange(math.ceil(rmin / step), math.floor(rmax / step) + 1)
        if len(ks) < 2:
            continue
        sites = ks[:, None] * u[None, :]
        norms = ks * step
        per[tuple(int(v) for v in u)] = fit_plateau(ev(sites), norms, d)
    consts = np.array([c for c, _ in per.values()])
    C = float(np.mean(consts))
    spread = float((consts.max() - consts.min()) / C)
    fit = AsymptoticFit(C, spread, per, (rmin, rmax))
    if strict and not fit.ok:
        raise PoorFit(f"directional spread {spread:.3%} > 5%")
    return fit


def nn_continuum_constant(d: int, rate: float = 1.0) -> float:
    """Gamma(d/2 - 1) / (4 pi^{d/2} rate): the Newtonian constant for the
    nearest-neighbour walk."""
    return math.gamma(d / 2 - 1) / (4 * math.pi ** (d / 2) * rate)
