"""Laces, lace weights, per-path checks of the expansion identity, estimators
of Pi_m and the diagrammatic bounds on Pi_m."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .ctrw import ExitVolume, PathBatch, WalkPath, sample_batch, sample_path
from .interaction import Edwards
from .kernel import JumpKernel, Volume
from .lattice_field import LatticeFunction, bracket, convolve


class CellQuadratureNotConverged(RuntimeError):
    pass


class EtaTooLarge(ValueError):
    pass


CELL_ORDER = 16
CELL_ORDER_M3 = 8
CELL_RTOL = 1e-8
CELL_ATOL = 1e-13
QUAD_SHARE = 1e-3


# ---------------------------------------------------------------------------
# laces


@dataclass(frozen=True)
class Lace:
    """Times s'_0 < s_1 < s'_1 < ... < s'_{m-1} < s_m, stored flat.

    For m >= 1 `times` has length 2m; for m = 0 it holds the single s_0.
    """

    times: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        object.__setattr__(self, "times", t)
        if not t:
            raise ValueError("a lace needs at least one time")
        if t[0] < 0:
            raise ValueError("lace times must be nonnegative")
        if len(t) > 1:
            if len(t) % 2:
                raise ValueError("an m >= 1 lace has 2m times")
            if any(b <= a for a, b in zip(t, t[1:])):
                raise ValueError("lace times must be strictly increasing")

    @property
    def m(self) -> int:
        return 0 if len(self.times) == 1 else len(self.times) // 2

    @property
    def s(self) -> tuple:
        """s_0, ..., s_m."""
        if self.m == 0:
            return self.times
        return (self.times[0],) + self.times[1::2]

    @property
    def sp(self) -> tuple:
        """s'_0, ..., s'_m."""
        if self.m == 0:
            return self.times
        return self.times[0::2] + (self.times[-1],)

    @property
    def intervals(self) -> list:
        s, sp = self.s, self.sp
        return [(s[i], sp[i + 1]) for i in range(self.m)]

    @property
    def end(self) -> float:
        return self.times[-1]


# ---------------------------------------------------------------------------
# a path on a time window, with exact piecewise-linear local times


class PathWindow:
    """Holding intervals of a path cut at `ell`, with cumulative local times
    over the sites it visits inside the volume (or all sites if None)."""

    def __init__(self, path: WalkPath, volume: Volume | None, ell: float | None = None):
        if ell is None:
            if path.exit_index is None:
                raise ValueError("need a window length for a path without exit")
            ell = path.exit_time
        if ell > path.resolved + 1e-15:
            raise ValueError(f"window {ell} beyond resolved time {path.resolved}")
        b = path.interval_bounds()
        keep = b[:, 0] < ell
        if path.exit_index is not None:
            keep[path.exit_index:] = False
        lo = b[keep, 0]
        hi = np.minimum(b[keep, 1], ell)
        sites = path.sites[keep]
        if volume is None:
            keys = [tuple(int(v) for v in s) for s in sites]
            uniq = sorted(set(keys))
            self.coords = np.array(uniq, dtype=np.int64).reshape(len(uniq), -1)
            idx = np.array([uniq.index(k) for k in keys])
            self.vol_index = None
        else:
            vi = volume.lookup(sites)
            uniq = np.unique(vi[vi >= 0])
            self.coords = volume.sites[uniq]
            idx = np.searchsorted(uniq, vi)
            idx[vi < 0] = -1
            self.vol_index = uniq
        self.ell = float(ell)
        self.cuts = np.r_[lo, hi[-1] if len(hi) else ell]
        self.site = idx.astype(np.int64)
        self.n_sites = len(self.coords)
        U = self.n_sites
        K = len(lo)
        self.onehot = np.zeros((K, U))
        inside = self.site >= 0
        self.onehot[np.arange(K)[inside], self.site[inside]] = 1.0
        dur = hi - lo
        self.Lcum = np.vstack([np.zeros(U), np.cumsum(self.onehot * dur[:, None], axis=0)])

    @property
    def K(self) -> int:
        return len(self.site)

    def cell_of(self, v: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.cuts, v, side="right") - 1, 0, self.K - 1)

    def tau0(self, v: np.ndarray, c: np.ndarray) -> np.ndarray:
        """tau_{[0, v]} for v in holding interval c, shape (..., sites)."""
        return self.Lcum[c] + (v - self.cuts[c])[..., None] * self.onehot[c]

    def tau(self, a, ca, b, cb) -> np.ndarray:
        return self.tau0(b, cb) - self.tau0(a, ca)

    def full_tau(self, tau: np.ndarray, volume: Volume) -> np.ndarray:
        """Scatter a local-time vector on visited sites into the whole volume."""
        out = np.zeros(tau.shape[:-1] + (len(volume),))
        out[..., self.vol_index] = tau
        return out


# ---------------------------------------------------------------------------
# Gauss-Legendre rules on ordered cells


def _gl01(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1), 0.5 * w


def _simplex_rule(a: float, b: float, r: int, q: int):
    """Nodes of a < v_1 < ... < v_r < b via v_j = v_{j-1} + (b - v_{j-1}) x_j."""
    x, w = _gl01(q)
    X = np.stack(np.meshgrid(*([x] * r), indexing="ij"), -1).reshape(-1, r)
    W = np.prod(np.stack(np.meshgrid(*([w] * r), indexing="ij"), -1).reshape(-1, r), axis=1)
    V = np.empty_like(X)
    prev = np.full(len(X), a)
    for j in range(r):
        span = b - prev
        W = W * span
        prev = prev + span * X[:, j]
        V[:, j] = prev
    return V, W


def cell_rule(cuts: np.ndarray, p: int, q: int, lower: float = 0.0):
    """Quadrature for functions of ordered v_1 < ... < v_p in [lower, cuts[-1]],
    split into cells by the holding intervals [cuts[k], cuts[k+1]].

    Returns nodes V (N, p), interval indices C (N, p) and weights W (N,).
    """
    K = len(cuts) - 1
    start = int(np.clip(np.searchsorted(cuts, lower, side="right") - 1, 0, K - 1))
    Vs, Cs, Ws = [], [], []
    for assign in itertools.combinations_with_replacement(range(start, K), p):
        parts_v, parts_w, parts_c = [], [], []
        for k, grp in itertools.groupby(assign):
            r = len(list(grp))
            a = max(cuts[k], lower)
            b = cuts[k + 1]
            if b <= a:
                break
            v, w = _simplex_rule(a, b, r, q)
            parts_v.append(v)
            parts_w.append(w)
            parts_c.append(k)
        else:
            V = parts_v[0]
            W = parts_w[0]
            C = np.full(V.shape, parts_c[0])
            for v, w, k in zip(parts_v[1:], parts_w[1:], parts_c[1:]):
                n1, n2 = len(V), len(v)
                V = np.hstack([np.repeat(V, n2, axis=0), np.tile(v, (n1, 1))])
                C = np.hstack([np.repeat(C, n2, axis=0), np.full((n1 * n2, v.shape[1]), k)])
                W = np.repeat(W, n2) * np.tile(w, n1)
            Vs.append(V)
            Cs.append(C)
            Ws.append(W)
    if not Vs:
        return np.zeros((0, p)), np.zeros((0, p), dtype=np.int64), np.zeros(0)
    return np.vstack(Vs), np.vstack(Cs).astype(np.int64), np.concatenate(Ws)


def lace_measure(ell: float, m: int, cuts=None, q: int = 3) -> float:
    """Lebesgue volume of {laces with m intervals and s_m <= ell} by the
    cell decomposition with w = 1; exact value ell^{2m} / (2m)!."""
    if m == 0:
        return float(ell)
    cuts = np.array([0.0, ell]) if cuts is None else np.asarray(cuts, dtype=float)
    _, _, W = cell_rule(cuts, 2 * m, q)
    return float(W.sum())


# ---------------------------------------------------------------------------
# lace weights along a path


def _edwards_energy(model: Edwards, tau: np.ndarray) -> np.ndarray:
    return model.g * np.sum(tau ** 2, axis=-1) + model.nu * np.sum(tau, axis=-1)


def _Y(model, volume, win: PathWindow, a, b) -> float:
    ca, cb = win.cell_of(np.array(a)), win.cell_of(np.array(b))
    tau = win.tau(np.array(a), ca, np.array(b), cb)
    if isinstance(model, Edwards):
        return float(np.exp(-_edwards_energy(model, tau)))
    full = win.full_tau(tau, volume)
    zero = np.zeros(len(volume))
    return float(np.exp(model.log_Z(volume, full) - model.log_Z(volume, zero)))


def _vertex(model, volume, win: PathWindow, s, t) -> float:
    cs, ct = win.cell_of(np.array(s)), win.cell_of(np.array(t))
    x, y = win.site[cs], win.site[ct]
    if x < 0 or y < 0:
        return 0.0
    if isinstance(model, Edwards):
        return -2 * model.g * float(x == y)
    tau = win.full_tau(win.tau(np.array(s), cs, np.array(t), ct), volume)
    return model.vertex(volume, tau, tuple(win.coords[x]), tuple(win.coords[y]))


def lace_weight(model, volume: Volume | None, path: WalkPath, lace: Lace) -> float:
    """w(L) = V(L) P(L) along the path; V_{s_0} for m = 0."""
    if lace.end >= path.resolved and path.exit_index is None:
        raise ValueError("lace extends beyond the resolved part of the path")
    ell = lace.end if path.exit_index is None else min(path.exit_time, path.resolved)
    ell = max(ell, lace.end)
    win = PathWindow(path, volume, min(ell, path.resolved))
    if lace.m == 0:
        c = win.cell_of(np.array(lace.times[0]))
        if win.site[c] < 0:
            return 0.0
        if isinstance(model, Edwards):
            return model.self_loop(volume)
        return model.self_loop(volume, tuple(win.coords[win.site[c]]))
    V = 1.0
    for s, t in lace.intervals:
        V *= _vertex(model, volume, win, s, t)
        if V == 0.0:
            return 0.0
    sp = lace.sp
    P = _Y(model, volume, win, sp[0], sp[1])
    for i in range(lace.m - 1):
        P *= _Y(model, volume, win, sp[i], sp[i + 2]) / _Y(model, volume, win, sp[i], sp[i + 1])
    return V * P


# ---------------------------------------------------------------------------
# Edwards integrands with the s_1, ..., s_{m-1} integrals done exactly
#
# With u_i = s'_i the vertex factor of interval i >= 1 integrates over
# s_i in (u_{i-1}, u_i) to the local time tau_{[u_{i-1}, u_i]} at X(u_{i+1}).


def _edwards_lace_integrand(model: Edwards, win: PathWindow, U: np.ndarray, C: np.ndarray,
                            m: int) -> np.ndarray:
    g = model.g
    site = win.site[C]
    T0 = win.tau0(U, C)  # (N, p, sites)

    def E(i, j):
        return _edwards_energy(model, T0[:, j] - T0[:, i])

    val = (-2 * g) ** m * ((site[:, 0] == site[:, 1]) & (site[:, 0] >= 0)).astype(float)
    for i in range(1, m):
        x = site[:, i + 1]
        loc = T0[:, i] - T0[:, i - 1]
        val = val * np.where(x >= 0, np.take_along_axis(loc, np.maximum(x, 0)[:, None], 1)[:, 0], 0.0)
    logP = -E(0, 1)
    for i in range(m - 1):
        logP = logP - E(i, i + 2) + E(i, i + 1)
    return val * np.exp(logP)


def _check_orders(fine: float, coarse: float, label: str, atol: float = CELL_ATOL):
    if abs(fine - coarse) > max(atol, CELL_RTOL * abs(fine)):
        raise CellQuadratureNotConverged(f"{label}: {fine!r} vs {coarse!r}")


@dataclass
class ExpansionCheck:
    lhs: float
    rhs: float
    terms: list
    residual: float
    remainder_bound: float
    C: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.remainder_bound


def _expansion_terms(model: Edwards, win: PathWindow, m_max: int, order: int, order_m3: int,
                     atol: float = CELL_ATOL):
    ell = win.ell
    cuts = win.cuts
    terms = []
    # m = 0
    for q in (order, order // 2):
        U, C, W = cell_rule(cuts, 1, q)
        inside = win.site[C[:, 0]] >= 0
        Tl = win.tau0(np.full(len(U), ell), np.full(len(U), win.K - 1))
        Y = np.exp(-_edwards_energy(model, Tl - win.tau0(U[:, 0], C[:, 0])))
        val = float(np.sum(W * (-model.nu) * inside * Y))
        if q == order:
            I0 = val
        else:
            _check_orders(I0, val, "m=0", atol)
    terms.append(I0)
    for m in range(1, m_max + 1):
        q = order if m <= 2 else order_m3
        res = []
        for qq in (q, max(2, q // 2)):
            U, C, W = cell_rule(cuts, m + 1, qq)
            f = _edwards_lace_integrand(model, win, U, C, m)
            last = win.tau0(U[:, -1], C[:, -1])
            Tl = win.tau0(np.full(len(U), ell), np.full(len(U), win.K - 1))
            f = f * np.exp(-_edwards_energy(model, Tl - last))
            res.append(float(np.sum(W * f)))
        _check_orders(res[0], res[1], f"m={m}", atol)
        terms.append(res[0])
    return terms


def remainder_bound(C_vertex: float, Ymax: float, Yinv: float, ell: float, m_max: int) -> float:
    """Tail sum over m > m_max of |V|^m Ymax^{m+1} Yinv^{m-1} ell^{2m}/(2m)!
    bounding the omitted terms; each factor is measured along the path."""
    total = 0.0
    m = m_max + 1
    while True:
        t = C_vertex ** m * Ymax ** (m + 1) * Yinv ** max(m - 1, 0) \
            * math.exp(2 * m * math.log(ell) - math.lgamma(2 * m + 1)) if ell > 0 else 0.0
        total += t
        if t < 1e-18 * max(total, 1e-300) or m > m_max + 200:
            break
        m += 1
    return total


def expansion_residual(model: Edwards, volume: Volume | None, path: WalkPath, ell: float,
                       m_max: int, order: int = CELL_ORDER,
                       order_m3: int = CELL_ORDER_M3) -> ExpansionCheck:
    """Compare Y_{0,ell} with 1 + sum_{m <= m_max} int_{L_{m,ell}} w(L) Y_{s'_m,ell} dL."""
    if not isinstance(model, Edwards):
        raise TypeError("the per-path expansion check needs the Edwards model")
    if m_max > 4:
        raise ValueError("m_max <= 4")
    win = PathWindow(path, volume, ell)
    Tl = win.Lcum[-1]
    lhs = float(np.exp(-_edwards_energy(model, Tl)))
    # path bounds: Y_{s,t} <= exp(|nu| ell) and 1/Y_{s,t} <= exp(g ell^2 + max(nu,0) ell)
    Ymax = math.exp(max(-model.nu, 0.0) * ell)
    Yinv = math.exp(model.g * float(np.sum(Tl) ** 2) + max(model.nu, 0.0) * ell)
    Cv = max(2 * model.g, abs(model.nu))
    bound = remainder_bound(Cv, Ymax, Yinv, ell, m_max)
    # each term's quadrature error estimate must sit well below the bound
    atol = max(CELL_ATOL, QUAD_SHARE * bound)
    terms = _expansion_terms(model, win, m_max, order, order_m3, atol)
    rhs = 1.0 + sum(terms)
    return ExpansionCheck(lhs, rhs, terms, abs(lhs - rhs), bound, max(Cv, Ymax, Yinv))


def sample_short_paths(kernel: JumpKernel, start, ell: float, n: int, seed: int,
                       max_jumps: int = 5, stream: int = 3, max_tries: int = 100_000) -> list:
    """First n paths (by index) with at most `max_jumps` jumps on [0, ell]."""
    from .ctrw import Horizon

    out = []
    i = 0
    while len(out) < n:
        if i >= max_tries:
            raise RuntimeError("too few short paths; lower ell or raise max_jumps")
        p = sample_path(kernel, start, Horizon(ell), seed, index=i, stream=stream)
        if len(p.jump_times) <= max_jumps:
            out.append(p)
        i += 1
    return out


# ---------------------------------------------------------------------------
# Pi_m estimators


@dataclass
class PiEstimate:
    m: int
    pair: tuple
    estimate: float
    stderr: float
    n_samples: int


def _pi_per_path_cells(model: Edwards, volume: Volume, path: WalkPath, m: int,
                       order: int) -> np.ndarray:
    """Per-path value of int_{L_m(0)} w(L) 1{X_{s'_m} = y} for every y."""
    win = PathWindow(path, volume)
    out = np.zeros(len(volume))
    if win.K == 0 or win.site[0] < 0:
        return out
    if m == 1:
        U, C, W = cell_rule(win.cuts, 1, order)
        U = np.hstack([np.zeros((len(U), 1)), U])
        C = np.hstack([np.zeros((len(C), 1), dtype=np.int64), C])
    else:
        U, C, W = cell_rule(win.cuts, m, order)
        U = np.hstack([np.zeros((len(U), 1)), U])
        C = np.hstack([np.zeros((len(C), 1), dtype=np.int64), C])
    f = _edwards_lace_integrand(model, win, U, C, m)
    y = win.site[C[:, -1]]
    ok = y >= 0
    np.add.at(out, win.vol_index[y[ok]], (W * f)[ok])
    return out


def pi_interval_values(model: Edwards, batch: PathBatch, x_index: int, m: int,
                       order: int = CELL_ORDER) -> np.ndarray:
    """Pi_1 or Pi_2 contribution of each holding interval of the batch for
    Edwards, attributed to the interval's site (the lace end point)."""
    g, nu = model.g, model.nu
    dur = batch.durations
    L = batch.prior_local_time()
    S2 = batch.cumulative_before(2 * L * dur + dur ** 2)
    S1 = batch.cumulative_before(dur)
    x, w = _gl01(order)
    h = dur[:, None] * x[None, :]
    E = g * (S2[:, None] + 2 * L[:, None] * h + h ** 2) + nu * (S1[:, None] + h)
    Y = np.exp(-E)
    at_x = batch.site == x_index
    if m == 1:
        vals = -2 * g * dur * (Y @ w) * at_x
    elif m == 2:
        # A_k = sum_{i < j < k} dur_i dur_j over site_i = site_k, site_j = x
        Mx = batch.cumulative_before(dur * at_x)
        A = Mx * L - batch.prior_local_time(dur * (Mx + dur * at_x))
        B = batch.cumulative_before(0.5 * dur ** 2 * at_x)
        F = A[:, None] + at_x[:, None] * (B[:, None] + L[:, None] * h + 0.5 * h ** 2)
        vals = 4 * g * g * dur * ((Y * F) @ w)
    else:
        raise ValueError("the vectorised estimator covers m = 1, 2")
    return vals


def _pi_fast(model: Edwards, batch: PathBatch, n_sites: int, x_index: int, m: int,
             order: int = CELL_ORDER) -> np.ndarray:
    """Per-path contributions (n_paths, n_sites)."""
    vals = pi_interval_values(model, batch, x_index, m, order)
    flat = np.bincount(batch.path * n_sites + batch.site, weights=vals,
                       minlength=batch.n_paths * n_sites)
    return flat.reshape(batch.n_paths, n_sites)


def _mean_se(samples: np.ndarray):
    n = len(samples)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return mean, se


def _pi_time_mc(model, volume: Volume, path: WalkPath, m: int, n_times: int,
                rng: np.random.Generator) -> np.ndarray:
    """Unbiased single-path estimate by uniform ordered lace times on [0, T]."""
    T = path.exit_time
    out = np.zeros(len(volume))
    if T is None or T <= 0:
        return out
    k = 2 * m - 1
    vol = T ** k / math.factorial(k)
    for _ in range(n_times):
        t = np.sort(rng.random(k)) * T
        lace = Lace((0.0,) + tuple(t))
        w = lace_weight(model, volume, path, lace)
        if w == 0.0:
            continue
        y = volume.lookup(path.position(lace.end)[None, :])[0]
        if y >= 0:
            out[y] += w * vol / n_times
    return out


def estimate_pi_m(model, kernel: JumpKernel, volume: Volume, m: int, n_samples: int,
                  seed: int, sources=None, method: str = "auto", symmetrize: bool = True,
                  order: int = CELL_ORDER, n_times: int = 64) -> dict:
    """Monte Carlo estimate of Pi^Lambda_m(x, y) for x in `sources` (all
    volume sites by default) and every y, with standard errors.

    Methods: "fast" (Edwards, m <= 2, vectorised), "cells" (Edwards, m <= 3,
    per path) and "time-mc" (any model, experimental).
    """
    if not 1 <= m <= 3:
        raise ValueError("estimators cover 1 <= m <= 3")
    if method == "auto":
        if isinstance(model, Edwards):
            method = "fast" if m <= 2 else "cells"
        else:
            method = "time-mc"
    if method in ("fast", "cells") and not isinstance(model, Edwards):
        raise TypeError(f"method {method!r} needs the Edwards model")
    sources = [tuple(s) for s in (volume.sites if sources is None else sources)]
    n_sites = len(volume)
    out = {}
    for si, src in enumerate(sources):
        xi = volume.index[tuple(int(v) for v in src)]
        if method == "fast":
            batch = sample_batch(kernel, src, n_samples, seed, volume=volume, stream=100 + xi)
            per = _pi_fast(model, batch, n_sites, xi, m, order)
        else:
            rng = np.random.default_rng([seed, 7, xi])
            per = np.zeros((n_samples, n_sites))
            for i in range(n_samples):
                p = sample_path(kernel, src, ExitVolume(volume), seed, index=i, stream=100 + xi)
                if method == "cells":
                    per[i] = _pi_per_path_cells(model, volume, p, m,
                                                order if m <= 2 else CELL_ORDER_M3)
                else:
                    per[i] = _pi_time_mc(model, volume, p, m, n_times, rng)
        mean, se = _mean_se(per)
        for yi in range(n_sites):
            y = tuple(int(v) for v in volume.sites[yi])
            out[(tuple(int(v) for v in src), y)] = PiEstimate(m, (src, y), float(mean[yi]),
                                                               float(se[yi]), n_samples)
    if symmetrize:
        out = symmetrize_pi(out)
    return out


class SymmetryViolated(AssertionError):
    pass


def symmetrize_pi(est: dict, nsigma: float = 3.0, strict: bool = True) -> dict:
    """Average (x, y) with (y, x) after checking agreement within nsigma."""
    out = dict(est)
    for (x, y), a in est.items():
        if (y, x) not in est or x >= y:
            continue
        b = est[(y, x)]
        se = math.hypot(a.stderr, b.stderr)
        if strict and abs(a.estimate - b.estimate) > nsigma * se + 1e-15:
            raise SymmetryViolated(f"Pi({x},{y}) = {a.estimate} vs {b.estimate} (se {se})")
        mean = 0.5 * (a.estimate + b.estimate)
        s = 0.5 * se
        out[(x, y)] = PiEstimate(a.m, (x, y), mean, s, a.n_samples + b.n_samples)
        out[(y, x)] = PiEstimate(a.m, (y, x), mean, s, a.n_samples + b.n_samples)
    return out


# ---------------------------------------------------------------------------
# diagram bounds


def diagram_bound_matrix(G: np.ndarray, Vbar: np.ndarray, m: int) -> np.ndarray:
    """Right side of the diagrammatic bound for all (x, y) of a finite volume:
    sum over internal x_j, x_j' of G(x, x_1) Vbar(x, x_1')
    prod_j G(x_j, x_j') G(x_j', x_{j+1}) Vbar(x_j, x_{j+1}'), x_m = x_m' = y."""
    if m < 1:
        raise ValueError("m >= 1")
    G = np.asarray(G, dtype=float)
    Vbar = np.asarray(Vbar, dtype=float)
    n = len(G)
    out = np.zeros((n, n))
    if m == 1:
        return G * Vbar
    for x in range(n):
        W = np.outer(G[x], Vbar[x]) * G  # W_1(x_1, x_1')
        for _ in range(2, m):
            W = (G.T @ W.T @ Vbar) * G
        out[x] = np.sum((Vbar.T @ W) * G.T, axis=1)
    return out


def diagram_bound(G, vbar, m: int, x, y, volume: Volume | None = None) -> float:
    """Diagram bound at (x, y).

    G is a LatticeFunction (translation invariant, internal sums over its box)
    or a finite-volume matrix with `volume`. `vbar` is a callable (x, y) ->
    Vbar evaluated on site arrays, as returned by the models' vertex_bound.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if isinstance(G, LatticeFunction):
        d = G.d
        zero = np.zeros(d, dtype=np.int64)
        e1 = np.eye(d, dtype=np.int64)[0]
        c = float(vbar(zero, zero))
        diagonal = float(vbar(zero, e1)) == 0.0
        if m == 1:
            return float(vbar(x, y)) * G(y - x)
        if diagonal and m == 2:
            return c * c * G(y - x) ** 3
        if diagonal and m == 3:
            G2 = LatticeFunction(d, G.r, G.values ** 2,
                                 None if G.decay is None else (G.decay[0] ** 2, 2 * G.decay[1]))
            conv = convolve(G2, G2)
            r = y - x
            if np.max(np.abs(r)) > conv.r:
                raise ValueError("(x, y) outside the box of G")
            return c ** 3 * G(r) * (conv(r) + conv.err)
        sites = _box_sites(d, G.r)
        diff = sites[None, :, :] - sites[:, None, :]
        inside = np.max(np.abs(diff), axis=-1) <= G.r
        Gm = np.where(inside, G.at(np.clip(diff, -G.r, G.r)), 0.0)
        Vm = vbar(sites[:, None, :], sites[None, :, :])
        M = diagram_bound_matrix(Gm, Vm, m)
        i = _site_row(sites, x)
        j = _site_row(sites, y)
        return float(M[i, j])
    if volume is None:
        raise ValueError("a matrix G needs its volume")
    Vm = vbar(volume.sites[:, None, :], volume.sites[None, :, :])
    M = diagram_bound_matrix(G, Vm, m)
    return float(M[volume.index[tuple(int(v) for v in x)], volume.index[tuple(int(v) for v in y)]])


def _box_sites(d: int, r: int) -> np.ndarray:
    ax = np.arange(-r, r + 1)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)


def _site_row(sites: np.ndarray, x) -> int:
    hit = np.nonzero(np.all(sites == np.asarray(x), axis=1))[0]
    if len(hit) == 0:
        raise ValueError(f"site {tuple(x)} outside the box")
    return int(hit[0])


# ---------------------------------------------------------------------------
# decay envelopes


@dataclass(frozen=True)
class EnvelopeConstants:
    K: float
    CJ_tilde: float
    C_conv: float

    @property
    def K1(self) -> float:
        return max(self.K * self.CJ_tilde, 1.0)

    @property
    def c1(self) -> float:
        return self.K1 ** 2 * (1 + self.K1 ** 2)

    @property
    def c2(self) -> float:
        return max(1.0, self.c1 * self.C_conv)


def decay_envelope(m: int, K: float, eta: float, d: int, constants: EnvelopeConstants):
    """x -> c1 (c2 eta)^m <x>^{-3(d-2)}; m = 0 selects the summed envelope
    c1 c2 eta / (1 - c2 eta) <x>^{-3(d-2)} over all m >= 1."""
    c1, c2 = constants.c1, constants.c2
    if m == 0:
        if c2 * eta >= 1:
            raise EtaTooLarge(f"c2 eta = {c2 * eta:.3g} >= 1")
        amp = c1 * c2 * eta / (1 - c2 * eta)
    else:
        amp = c1 * (c2 * eta) ** m

    def env(x):
        x = np.asarray(x, dtype=float)
        return amp * bracket(np.sum(x ** 2, axis=-1)) ** (-3 * (d - 2))

    env.amplitude = amp
    return env


def envelope_constants(kernel: JumpKernel, K: float, radius: int = 8,
                       scan_radius: int = 1) -> EnvelopeConstants:
    """C~_J = max over the box of hatJ S(x) <x>^{d-2}; C_conv from the
    certified convolution constant (d >= 5)."""
    from .green_free import free_green_infinite
    from .lattice_field import certify_conv_e

    d = kernel.d
    S = free_green_infinite(kernel, radius).S
    CJ = float(np.max(kernel.hatJ * S.values * bracket(S.norm2()) ** (d - 2)))
    C = certify_conv_e(d, scan_radius=scan_radius).C
    return EnvelopeConstants(K, CJ, C)
