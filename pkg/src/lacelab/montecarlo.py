"""Weighted-walk estimators: Green's functions, spin two-point functions,
susceptibility, critical scans and the |x|^{d-2} plateau diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ctrw import PathBatch, sample_batch
from .green_free import direction_set, fit_plateau, resolvent
from .interaction import Edwards, McmcResult, Phi4, mcmc_two_point
from .kernel import JumpKernel, Volume
from .lace import _gl01
from .lattice_field import LatticeFunction

GL_ORDER = 16
CHUNK_PATHS = 20_000


class BracketNotFound(RuntimeError):
    pass


class SusceptibilityBoundViolated(AssertionError):
    pass


class EstimateNotPositive(AssertionError):
    pass


# ---------------------------------------------------------------------------
# accumulation of per-path sums


class PathAccumulator:
    """Sums and sums of squares of per-path totals, per target site and
    overall, merged chunk by chunk in path order."""

    def __init__(self, n_sites: int):
        self.n_sites = n_sites
        self.n = 0
        self.s = np.zeros(n_sites)
        self.s2 = np.zeros(n_sites)
        self.t = 0.0
        self.t2 = 0.0

    def add(self, n_paths: int, path: np.ndarray, site: np.ndarray, vals: np.ndarray):
        U = self.n_sites
        keys = path.astype(np.int64) * U + site
        uk, inv = np.unique(keys, return_inverse=True)
        per = np.bincount(inv, weights=vals, minlength=len(uk))
        ys = uk % U
        self.s += np.bincount(ys, weights=per, minlength=U)
        self.s2 += np.bincount(ys, weights=per ** 2, minlength=U)
        tot = np.bincount(path, weights=vals, minlength=n_paths)
        self.t += float(tot.sum())
        self.t2 += float(np.sum(tot ** 2))
        self.n += n_paths

    def _stats(self, s, s2):
        n = self.n
        mean = s / n
        var = np.maximum(s2 / n - mean ** 2, 0.0) * n / max(n - 1, 1)
        return mean, np.sqrt(var / n)

    def site_stats(self):
        return self._stats(self.s, self.s2)

    def total_stats(self):
        m, s = self._stats(np.array(self.t), np.array(self.t2))
        return float(m), float(s)


# ---------------------------------------------------------------------------
# Green's function estimates


@dataclass
class GreenEstimate:
    volume: Volume
    source: tuple
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    model: str
    total: tuple = (math.nan, math.nan)

    def __getitem__(self, b) -> tuple:
        i = self.volume.index[tuple(int(v) for v in b)]
        return float(self.mean[i]), float(self.stderr[i])

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in s): (float(m), float(e))
                for s, m, e in zip(self.volume.sites, self.mean, self.stderr)}

    def to_lattice(self, r: int, which: str = "mean") -> LatticeFunction:
        """Translate so the source is the origin and place on the box of radius r."""
        d = self.volume.d
        arr = np.zeros((2 * r + 1,) * d)
        rel = self.volume.sites - np.asarray(self.source)
        ok = np.all(np.abs(rel) <= r, axis=1)
        vals = self.mean if which == "mean" else self.stderr
        arr[tuple((rel[ok] + r).T)] = vals[ok]
        return LatticeFunction(d, r, arr)


def _edwards_interval_integrals(model: Edwards, batch: PathBatch, t: np.ndarray | None,
                                order: int) -> np.ndarray:
    """int_0^{dur} R_{t, tau_{[0, t0 + h]}} dh for every holding interval."""
    g, nu = model.g, model.nu
    dur = batch.durations
    L = batch.prior_local_time()
    if t is not None:
        L = L + t[batch.site]
    S2 = batch.cumulative_before(2 * L * dur + dur ** 2)
    S1 = batch.cumulative_before(dur)
    x, w = _gl01(order)
    out = np.empty(len(dur))
    step = 200_000
    for i in range(0, len(dur), step):
        sl = slice(i, i + step)
        h = dur[sl, None] * x[None, :]
        E = g * (S2[sl, None] + 2 * L[sl, None] * h + h * h) + nu * (S1[sl, None] + h)
        out[sl] = dur[sl] * (np.exp(-E) @ w)
    return out


def _phi4_interval_integrals(model: Phi4, volume: Volume, batch: PathBatch, t: np.ndarray,
                             order: int) -> np.ndarray:
    dur = batch.durations
    T0 = batch.dense_local_times(len(volume)) + t[None, :]
    x, w = _gl01(order)
    logZt = float(model.log_Z(volume, t))
    out = np.empty(len(dur))
    step = max(1, 40_000 // order)
    for i in range(0, len(dur), step):
        sl = slice(i, i + step)
        n = len(dur[sl])
        h = dur[sl, None] * x[None, :]
        tau = np.repeat(T0[sl, None, :], order, axis=1)
        tau[np.arange(n)[:, None], np.arange(order)[None, :], batch.site[sl, None]] += h
        lz = model.log_Z(volume, tau.reshape(-1, len(volume))).reshape(n, order)
        out[sl] = dur[sl] * (np.exp(lz - logZt) @ w)
    return out


def estimate_green(model, kernel: JumpKernel, volume: Volume, a, n_samples: int, seed: int,
                   t=None, stream: int = 0, order: int = GL_ORDER,
                   chunk: int = CHUNK_PATHS, check_positive: bool = True) -> GreenEstimate:
    """G^Lambda_t(a, .) by exact walks killed on exit from the volume; each
    holding interval contributes the Gauss-Legendre integral of the ratio
    weight R_{t, tau_{[0, l]}} over the interval."""
    a = tuple(int(v) for v in a)
    if a not in volume:
        raise ValueError(f"source {a} not in the volume")
    t_vec = None if t is None else np.asarray(t, dtype=float)
    if isinstance(model, Phi4):
        t_vec = np.zeros(len(volume)) if t_vec is None else t_vec
        model.rule(volume)  # fail early on large volumes
    acc = PathAccumulator(len(volume))
    for first in range(0, n_samples, chunk):
        n = min(chunk, n_samples - first)
        batch = sample_batch(kernel, a, n, seed, volume=volume, first_index=first, stream=stream)
        if isinstance(model, Edwards):
            vals = _edwards_interval_integrals(model, batch, t_vec, order)
        else:
            vals = _phi4_interval_integrals(model, volume, batch, t_vec, order)
        acc.add(n, batch.path, batch.site, vals)
    mean, se = acc.site_stats()
    est = GreenEstimate(volume, a, mean, se, n_samples, repr(model), acc.total_stats())
    if check_positive and np.any(mean < 0):
        raise EstimateNotPositive("negative Green's function estimate")
    return est


def estimate_green_matrix(model, kernel: JumpKernel, volume: Volume, n_per_source: int,
                          seed: int, **kw):
    """Estimates from every source; returns (mean, stderr) matrices."""
    n = len(volume)
    M = np.zeros((n, n))
    E = np.zeros((n, n))
    for i, a in enumerate(volume.sites):
        est = estimate_green(model, kernel, volume, a, n_per_source, seed, stream=i, **kw)
        M[i], E[i] = est.mean, est.stderr
    return M, E


# ---------------------------------------------------------------------------
# spin two-point functions


@dataclass
class SpinTwoPoint:
    mean: np.ndarray
    stderr: np.ndarray
    method: str
    mcmc: McmcResult | None = None


def spin_two_point(kernel: JumpKernel, volume: Volume, g: float, nu: float, n: int, t=None,
                   method: str = "quadrature", quad_order: int = 32, **mcmc_kw) -> SpinTwoPoint:
    """<phi_a . phi_b>_{g, nu, t} / n for all pairs of sites."""
    if method == "quadrature":
        if g == 0:
            # t only rescales Z_t at g = 0, so the covariance is the resolvent
            G = resolvent(kernel, volume, nu)
            return SpinTwoPoint(G, np.zeros_like(G), method)
        model = Phi4(g, nu, n, kernel, quad_order)
        G = model.two_point(volume, t)
        return SpinTwoPoint(G, np.zeros_like(G), method)
    if method == "mcmc":
        r = mcmc_two_point(kernel, volume, g, nu, n, t, **mcmc_kw)
        return SpinTwoPoint(r.mean, r.stderr, method, r)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# susceptibility and critical scans


def estimate_susceptibility(model, kernel: JumpKernel, volume: Volume, a, n_samples: int,
                            seed: int, stream: int = 0, strict: bool = True):
    """chi^Lambda = sum_b G^Lambda(a, b) with the standard error of the
    per-path totals; checks chi <= 1/nu within 3 sigma for nu > 0."""
    est = estimate_green(model, kernel, volume, a, n_samples, seed, stream=stream)
    chi, se = est.total
    nu = model.nu
    if strict and nu > 0 and chi > 1 / nu + 3 * se:
        raise SusceptibilityBoundViolated(f"chi = {chi} > 1/nu = {1 / nu} (se {se})")
    return chi, se


@dataclass
class CriticalScan:
    nu: np.ndarray
    chi: dict
    chi_se: dict
    F: np.ndarray
    F_se: np.ndarray
    sigma_D: np.ndarray
    sigma_D_se: np.ndarray
    bracket: tuple
    points: list = field(default_factory=list)

    def chi_monotone(self, nsigma: float = 3.0) -> bool:
        order = np.argsort(self.nu)
        for side, chi in self.chi.items():
            c = np.asarray(chi)[order]
            s = np.asarray(self.chi_se[side])[order]
            if np.any(np.diff(c) > nsigma * np.hypot(s[1:], s[:-1])):
                return False
        return True


def critical_scan(kernel: JumpKernel, g: float, sides: list, nu_grid, n_samples: int,
                  seed: int, width: float = 1e-4, pi_order: int = 2,
                  max_bisect: int = 30, S_radius: int | None = None) -> CriticalScan:
    """Scan nu downward for the Edwards model, estimating chi on boxes of the
    given sides and the deconvolution symbol sign sum D on the largest box;
    nu_c is bracketed by bisection on the sign of sum D with common random
    numbers."""
    from .dyson import edwards_point

    nu_grid = np.sort(np.asarray(nu_grid, dtype=float))[::-1]
    sides = sorted(sides)
    big = sides[-1]
    chi = {s: [] for s in sides}
    chi_se = {s: [] for s in sides}
    F, F_se, sd, sd_se, points = [], [], [], [], []
    for nu in nu_grid:
        model = Edwards(g, float(nu))
        for s in sides[:-1]:
            vol = Volume.box(kernel.d, s)
            c, e = estimate_susceptibility(model, kernel, vol, np.zeros(kernel.d, int),
                                           n_samples, seed, strict=False)
            chi[s].append(c)
            chi_se[s].append(e)
        pt = edwards_point(kernel, g, float(nu), big, n_samples, seed, pi_order=pi_order,
                           S_radius=S_radius)
        chi[big].append(pt.chi[0])
        chi_se[big].append(pt.chi[1])
        F.append(pt.F)
        F_se.append(pt.F_se)
        sd.append(pt.sigma_D)
        sd_se.append(pt.sigma_D_se)
        points.append(pt)
    sd_arr = np.array(sd)
    sub = np.nonzero(sd_arr >= 0)[0]
    sup = np.nonzero(sd_arr < 0)[0]
    if len(sub) == 0 or len(sup) == 0:
        raise BracketNotFound("sum D does not change sign on the grid")
    lo = float(nu_grid[sub].max())
    hi = float(nu_grid[sup].min())
    if lo >= hi:
        raise BracketNotFound("sum D is not monotone on the grid")
    err = 0.0
    it = 0
    while hi - lo > width and it < max_bisect:
        mid = 0.5 * (lo + hi)
        pt = edwards_point(kernel, g, mid, big, n_samples, seed, pi_order=pi_order,
                           need_F=False, S_radius=S_radius)
        err = max(err, pt.sigma_D_se * (kernel.hatJ + mid))
        if pt.sigma_D >= 0:
            lo = mid
        else:
            hi = mid
        it += 1
    # sum D = (sum Psi - nu) / (hatJ + nu): widen by 3 sigma of sum Psi
    bracket = (lo - 3 * err, hi + 3 * err)
    return CriticalScan(nu_grid, {s: np.array(v) for s, v in chi.items()},
                        {s: np.array(v) for s, v in chi_se.items()}, np.array(F),
                        np.array(F_se), sd_arr, np.array(sd_se), bracket, points)


# ---------------------------------------------------------------------------
# plateau diagnostic


@dataclass
class PlateauReport:
    radii: tuple
    spread: dict
    per_direction: dict
    constant: float
    trend: str

    @property
    def decreasing(self) -> bool:
        s = [self.spread[r] for r in self.radii]
        return all(b < a for a, b in zip(s, s[1:]))


def _direction_points(d: int, r: float):
    """For each lattice direction u, the multiple k u with |k u| closest to r."""
    pts = {}
    for u in direction_set(d):
        step = math.sqrt(float(u @ u))
        k = max(1, int(round(r / step)))
        pts[tuple(int(v) for v in u)] = k * u
    return pts


def plateau_diagnostic(G: LatticeFunction, d: int | None = None, radii=(6, 8, 10),
                       fit_range: tuple | None = None) -> PlateauReport:
    """G(x)|x|^{d-2} along lattice directions at each radius: the
    directional spread (max - min)/mean per radius, and a plateau constant
    fitted as C + A/|x|^2 over all direction points in `fit_range`."""
    d = G.d if d is None else d
    spread, per = {}, {}
    for r in radii:
        vals = {}
        for u, x in _direction_points(d, r).items():
            if np.max(np.abs(x)) > G.r:
                continue
            n = math.sqrt(float(x @ x))
            vals[u] = G(x) * n ** (d - 2)
        v = np.array(list(vals.values()))
        spread[r] = float((v.max() - v.min()) / v.mean())
        per[r] = vals
    lo, hi = fit_range or (min(radii), max(radii))
    consts = []
    for u in direction_set(d):
        step = math.sqrt(float(u @ u))
        ks = np.arange(math.ceil(lo / step), math.floor(hi / step) + 1)
        ks = ks[ks * np.max(u) <= G.r]
        if len(ks) < 2:
            continue
        sites = ks[:, None] * u[None, :]
        consts.append(fit_plateau(G.at(sites), ks * step, d)[0])
    s = [spread[r] for r in radii]
    trend = "decreasing" if all(b < a for a, b in zip(s, s[1:])) else "not decreasing"
    return PlateauReport(tuple(radii), spread, per, float(np.mean(consts)), trend)
