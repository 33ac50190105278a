"""Dyson equation assembly and checks: deconvolution data, class membership,
residuals, Hara's conditions, the bootstrap function F, infrared bounds and
the Simon inequality."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ctrw import sample_batch
from .green_free import d_tilted, free_green_infinite, resolvent, tilted_green
from .interaction import Edwards
from .kernel import JumpKernel, Volume
from .lace import pi_interval_values
from .lattice_field import (LatticeFunction, TailNotControlled, TorusFunction, bracket,
                            convolve, stencil_residual, tail_sum_bound, torus_deconvolve)
from .montecarlo import GreenEstimate, PathAccumulator, _edwards_interval_integrals

SYM_TOL = 1e-12
SUM_TOL = 1e-14


class SelfLoopTooLarge(ValueError):
    pass


class NotMember(AssertionError):
    def __init__(self, item: str, site):
        super().__init__(f"class membership fails at item ({item}), site {site}")
        self.item = item
        self.site = site


class ConditionFailed(AssertionError):
    def __init__(self, name: str, margin: float):
        super().__init__(f"{name} fails with margin {margin:.3e}")
        self.name = name
        self.margin = margin


def symmetrize(f: LatticeFunction) -> LatticeFunction:
    """Average over the signed permutations of the coordinates."""
    acc = np.zeros_like(f.values)
    n = 0
    for perm in itertools.permutations(range(f.d)):
        t = np.transpose(f.values, perm)
        for flips in itertools.product((False, True), repeat=f.d):
            axes = tuple(i for i, fl in enumerate(flips) if fl)
            acc += np.flip(t, axes) if axes else t
            n += 1
    return LatticeFunction(f.d, f.r, acc / n, f.decay, f.err)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class DysonData:
    kernel: JumpKernel
    beta: float
    Psi: LatticeFunction
    w: float
    D: LatticeFunction

    @property
    def sum_D(self) -> float:
        return self.D.sum()

    @property
    def mu(self) -> float:
        """hatJ^{-1}(1 + sum D), the tilt of the comparison walk."""
        return (1 + self.sum_D) / self.kernel.hatJ

    def tilde(self, G):
        return G.scale(1 / self.w) if isinstance(G, LatticeFunction) else np.asarray(G) / self.w


def assemble_dyson(kernel: JumpKernel, beta: float, Psi: LatticeFunction | None = None,
                   radius: int | None = None) -> DysonData:
    """w = (hatJ - beta)^{-1} and D = D^{S_w} + w Psi."""
    if beta >= kernel.hatJ:
        raise SelfLoopTooLarge(f"beta = {beta} >= hatJ = {kernel.hatJ}")
    w = 1.0 / (kernel.hatJ - beta)
    r = max(kernel.range, 0 if Psi is None else Psi.r, radius or 0)
    D = d_tilted(kernel, w, r)
    if Psi is None:
        Psi = LatticeFunction(kernel.d, 0, np.zeros((1,) * kernel.d))
    else:
        D = D + Psi.pad(r).scale(w)
    return DysonData(kernel, float(beta), Psi, w, D)


@dataclass
class DcMembership:
    C: float
    z: float
    margins: LatticeFunction

    @property
    def min_margin(self) -> float:
        return float(self.margins.values.min())


def check_class_membership(D: LatticeFunction, kernel: JumpKernel, C: float, g: float,
                           z: float | None = None) -> DcMembership:
    """Items: (i) symmetry, (ii) sum D <= 0, (iii) |D - D^{S_z}| <= C g <x>^{-(d+4)}
    for a witness z in [0, 1/hatJ]; without z, the least-squares fit of D + delta
    to z J_+ is used, clipped to the interval."""
    scale = max(float(np.max(np.abs(D.values))), 1.0)
    if D.symmetry_defect() > SYM_TOL * scale:
        v = D.values
        bad = np.unravel_index(np.argmax(np.abs(np.flip(v, 0) - v)), v.shape)
        raise NotMember("i", tuple(int(i) - D.r for i in bad))
    if D.sum() > SUM_TOL * scale:
        raise NotMember("ii", None)
    J = kernel.jplus_array(D.r)
    if z is None:
        Dp = D.values.copy()
        Dp[(D.r,) * D.d] += 1.0
        z = float(np.sum(J * Dp) / np.sum(J * J))
    z = min(max(z, 0.0), 1.0 / kernel.hatJ)
    diff = np.abs(D.values - d_tilted(kernel, z, D.r).values)
    allow = C * g * bracket(D.norm2()) ** (-(D.d + 4))
    margins = LatticeFunction(D.d, D.r, allow - diff)
    worst = np.unravel_index(np.argmin(margins.values), diff.shape)
    if margins.values[worst] < -SUM_TOL * scale:
        raise NotMember("iii", tuple(int(i) - D.r for i in worst))
    return DcMembership(C, z, margins)


# ---------------------------------------------------------------------------
# residuals


def dyson_residual_matrix(G: np.ndarray, S: np.ndarray, Pi: np.ndarray) -> float:
    """sup |G - S - S Pi G| for finite-volume matrices; Pi includes the
    self-loop on its diagonal."""
    return float(np.max(np.abs(G - S - S @ Pi @ G)))


@dataclass
class InfiniteResidual:
    residual: float
    truncation: float
    interior: int


def dyson_residual(G: LatticeFunction, kernel: JumpKernel, beta: float,
                   Psi: LatticeFunction) -> InfiniteResidual:
    """sup |(hatJ - beta) G - delta - J_+ * G - Psi * G| on the interior of
    G's box where both convolutions only need stored values. Mass of Psi
    outside its box (from its decay metadata) bounds the truncation."""
    inner = G.r - max(kernel.range, Psi.r)
    if inner < 0:
        raise ValueError("G's box is too small for the interior")
    J = LatticeFunction(kernel.d, kernel.range, kernel.jplus_array(kernel.range))
    JG = convolve(J.pad(G.r), G).restrict(inner)
    PG = convolve(Psi.pad(G.r), G).restrict(inner)
    lhs = G.restrict(inner).scale(kernel.hatJ - beta).values
    res = lhs - JG.values - PG.values
    res[(inner,) * G.d] -= 1.0
    trunc = 0.0
    if Psi.decay is not None and Psi.decay[0] > 0:
        A, p = Psi.decay
        if p <= G.d:
            raise TailNotControlled("Psi decay exponent must exceed d")
        trunc = A * tail_sum_bound(G.d, p, Psi.r) * float(np.max(np.abs(G.values)))
    return InfiniteResidual(float(np.max(np.abs(res))), trunc, inner)


# ---------------------------------------------------------------------------
# Hara's conditions


def symbol(Q: LatticeFunction, ks: np.ndarray) -> np.ndarray:
    """Q^(k) on the tensor grid ks^d, for Q symmetric under coordinate flips."""
    ax = np.arange(-Q.r, Q.r + 1)
    cosm = np.cos(np.outer(ks, ax))
    out = Q.values
    for _ in range(Q.d):
        # contract the leading axis; the new momentum axis goes last
        out = np.tensordot(out, cosm, axes=([0], [1]))
    return out


@dataclass
class HaraReport:
    H1: float
    K1: float
    K2: float
    K2_tail: float
    K0: float
    K0_grid: float
    K0_small: float
    eps: float
    rho: float

    @property
    def passed(self) -> dict:
        return {"H1": self.H1 <= 1e-12, "H2": math.isfinite(self.K1),
                "H3": math.isfinite(self.K2 + self.K2_tail), "H4": self.K0 > 0}


def hara_conditions(Q: LatticeFunction, rho: float = 1.0, n_grid: int = 17,
                    eps: float | None = None, strict: bool = True) -> HaraReport:
    """H1 |Q^(0) - 1|; H2 the smallest K1 with |Q| <= K1 <x>^{-(d+2+rho)};
    H3 K2 = sum |x|^{2+rho} |Q| (plus a tail bound from decay metadata);
    H4 K0 = inf (Q^(0) - Q^(k))/|k|^2, from a grid on [0, pi]^d outside the
    ball |k| <= eps and, inside it, the bound
    sum Q x_1^2 / 2 - eps^2 sum |Q| |x|^4 / 24."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    d = Q.d
    n2 = Q.norm2().astype(float)
    absQ = np.abs(Q.values)
    H1 = abs(Q.sum() - 1.0)
    K1 = float(np.max(absQ * bracket(n2) ** (d + 2 + rho)))
    K2 = float(np.sum(n2 ** ((2 + rho) / 2) * absQ))
    K2_tail = 0.0
    if Q.decay is not None and Q.decay[0] > 0:
        A, p = Q.decay
        K2_tail = A * tail_sum_bound(d, p - 2 - rho, Q.r) if p - 2 - rho > d else math.inf
    x1 = (np.arange(-Q.r, Q.r + 1) ** 2).reshape((-1,) + (1,) * (d - 1))
    m2 = float(np.sum(Q.values * x1)) / 2
    m4 = float(np.sum(absQ * n2 ** 2)) / 24
    if eps is None:
        eps = min(math.pi / 2, math.sqrt(m2 / (2 * m4))) if m4 > 0 else math.pi / 2
    small = m2 - eps ** 2 * m4
    ks = np.linspace(0, math.pi, n_grid)
    Qk = symbol(Q, ks)
    k2 = sum(np.meshgrid(*([ks ** 2] * d), indexing="ij"))
    far = k2 > eps ** 2
    grid = float(np.min((Q.sum() - Qk[far]) / k2[far])) if np.any(far) else math.inf
    K0 = min(grid, small)
    rep = HaraReport(H1, K1, K2, K2_tail, K0, grid, small, eps, rho)
    if strict:
        for name, ok in rep.passed.items():
            if not ok:
                margin = {"H1": -H1, "H2": -math.inf, "H3": -math.inf, "H4": K0}[name]
                raise ConditionFailed(name, margin)
    return rep


def hara_Q(kernel: JumpKernel, Psi: LatticeFunction | None = None, radius: int | None = None):
    """Q = w (J_+ + Psi) with w chosen so that Q^(0) = 1."""
    r = max(kernel.range, 0 if Psi is None else Psi.r, radius or 0)
    J = LatticeFunction(kernel.d, r, kernel.jplus_array(r))
    num = J if Psi is None else J + Psi.pad(r)
    return num.scale(1.0 / num.sum())


# ---------------------------------------------------------------------------
# bootstrap function and infrared bound


def _as_arrays(G, S, G_se):
    g = G.values if isinstance(G, LatticeFunction) else np.asarray(G, dtype=float)
    s = S.values if isinstance(S, LatticeFunction) else np.asarray(S, dtype=float)
    if G_se is None:
        e = np.zeros_like(g)
    else:
        e = G_se.values if isinstance(G_se, LatticeFunction) else np.asarray(G_se, dtype=float)
    if g.shape != s.shape:
        raise ValueError("G and S live on different boxes")
    return g, s, e


def bootstrap_F(G, S, G_se=None, max_rel_se: float | None = None) -> tuple:
    """F = max G/S over the box, its standard error and the argmax index.
    With `max_rel_se`, sites whose estimate has a larger relative standard
    error are left out of the maximum."""
    g, s, e = _as_arrays(G, S, G_se)
    use = s > 0
    if max_rel_se is not None:
        use &= e <= max_rel_se * np.abs(g)
    ratio = np.where(use, g / np.where(s > 0, s, 1), -np.inf)
    i = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[i]), float(e[i] / s[i]), tuple(int(v) for v in i)


@dataclass
class IrbReport:
    K: float
    worst: tuple
    margin: float
    sigma: float
    nsigma: float

    @property
    def passed(self) -> bool:
        return self.margin >= -self.nsigma * self.sigma


def irb_check(G, S, K: float, G_se=None, nsigma: float = 3.0) -> IrbReport:
    """G <= K S sitewise; the margin is min (K S - G) with the error at the
    worst site in units of standard errors."""
    g, s, e = _as_arrays(G, S, G_se)
    marg = K * s - g
    z = np.where(e > 0, marg / np.where(e > 0, e, 1), np.where(marg >= 0, np.inf, -np.inf))
    i = np.unravel_index(np.argmin(z), z.shape)
    return IrbReport(K, tuple(int(v) for v in i), float(marg[i]), float(e[i]), nsigma)


# ---------------------------------------------------------------------------
# Simon inequality


@dataclass
class SimonReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    pairs: int

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def sigma(self) -> float:
        return self.lhs_se + self.rhs_se

    def passed(self, nsigma: float = 3.0) -> bool:
        return self.margin >= -nsigma * self.sigma


def boundary_pairs(kernel: JumpKernel, volume: Volume, inner: Volume):
    """(x', x, J(x - x')) for x' in the inner set and x in volume minus it."""
    out = []
    for xp in inner.sites:
        for y, r in zip(kernel.sites, kernel.rates):
            x = xp + y
            if tuple(int(v) for v in x) in inner:
                continue
            j = volume.index.get(tuple(int(v) for v in x))
            if j is not None:
                out.append((volume.index[tuple(int(v) for v in xp)], j, float(r)))
    return out


def simon_check(kernel: JumpKernel, volume: Volume, inner: Volume, a, b, Ga, Gb,
                Ga_se=None, Gb_se=None) -> SimonReport:
    """G(a, b) <= sum_{x' in inner, x not in inner} G(a, x') J(x - x') G(x, b).

    Ga and Gb are the rows G(a, .) and G(b, .) over the volume (G(x, b) is
    read as G(b, x) by symmetry). The right side's error is bounded by the
    triangle inequality over the independent rows."""
    a = tuple(int(v) for v in a)
    b = tuple(int(v) for v in b)
    if a not in inner or b in inner:
        raise ValueError("need a in the inner set and b outside it")
    Ga, Gb = np.asarray(Ga, float), np.asarray(Gb, float)
    Ea = np.zeros_like(Ga) if Ga_se is None else np.asarray(Ga_se, float)
    Eb = np.zeros_like(Gb) if Gb_se is None else np.asarray(Gb_se, float)
    pairs = boundary_pairs(kernel, volume, inner)
    rhs, se = 0.0, 0.0
    for i, j, r in pairs:
        rhs += Ga[i] * r * Gb[j]
        se += r * (Ea[i] * abs(Gb[j]) + abs(Ga[i]) * Eb[j])
    ib = volume.index[b]
    return SimonReport(float(Ga[ib]), float(Ea[ib]), rhs, se, len(pairs))


def simon_free(kernel: JumpKernel, volume: Volume, inner: Volume, a, b,
               nu: float = 0.0) -> SimonReport:
    """Exact g = 0 check from the resolvent."""
    S = resolvent(kernel, volume, nu)
    ia = volume.index[tuple(int(v) for v in a)]
    ib = volume.index[tuple(int(v) for v in b)]
    return simon_check(kernel, volume, inner, a, b, S[ia], S[ib])


# ---------------------------------------------------------------------------
# Edwards pipeline: G, Psi and the symbol sum from one batch of walks


_S_CACHE: dict = {}


def infinite_free(kernel: JumpKernel, radius: int) -> LatticeFunction:
    key = (kernel.name, kernel.d, tuple(kernel.rates), radius)
    if key not in _S_CACHE:
        _S_CACHE[key] = free_green_infinite(kernel, radius).S
    return _S_CACHE[key]


@dataclass
class EdwardsPoint:
    nu: float
    g: float
    side: int
    chi: tuple
    sum_psi: tuple
    sigma_D: float
    sigma_D_se: float
    G: GreenEstimate
    Psi: LatticeFunction
    Psi_se: LatticeFunction
    F: float = math.nan
    F_se: float = math.nan
    irb: IrbReport | None = None
    extra: dict = field(default_factory=dict)


def edwards_point(kernel: JumpKernel, g: float, nu: float, side: int, n_samples: int,
                  seed: int, pi_order: int = 2, need_F: bool = True, S_radius: int | None = None,
                  K: float = 2.0, chunk: int = 5000, order: int = 16,
                  F_rel_se: float | None = 0.1) -> EdwardsPoint:
    """One nu: G^Lambda(0, .), Psi ~ Pi_1 + ... + Pi_{pi_order} (m <= 2) and
    sum D on the box of the given side, all from the same walks from the
    origin. With need_F, also F = max G/S against the infinite-volume S over
    the sites resolved to relative error F_rel_se, and the K-infrared-bound
    check over all sites."""
    if pi_order not in (1, 2):
        raise ValueError("pi_order must be 1 or 2")
    d = kernel.d
    model = Edwards(g, nu)
    vol = Volume.box(d, side)
    origin = (0,) * d
    xi = vol.index[origin]
    accG = PathAccumulator(len(vol))
    accP = PathAccumulator(len(vol))
    for first in range(0, n_samples, chunk):
        n = min(chunk, n_samples - first)
        batch = sample_batch(kernel, origin, n, seed, volume=vol, first_index=first)
        accG.add(n, batch.path, batch.site, _edwards_interval_integrals(model, batch, None, order))
        pv = sum(pi_interval_values(model, batch, xi, m, order) for m in range(1, pi_order + 1))
        accP.add(n, batch.path, batch.site, pv)
    gm, gs = accG.site_stats()
    pm, ps = accP.site_stats()
    G = GreenEstimate(vol, origin, gm, gs, n_samples, repr(model), accG.total_stats())
    r = side // 2 if side % 2 else side // 2 - 1
    Psi = _to_box(vol, pm, r)
    Psi_se = _to_box(vol, ps, r)
    sp, sp_se = accP.total_stats()
    den = kernel.hatJ + nu
    pt = EdwardsPoint(nu, g, side, G.total, (sp, sp_se), (sp - nu) / den, sp_se / den,
                      G, Psi, Psi_se)
    if need_F:
        R = r if S_radius is None else S_radius
        S = infinite_free(kernel, R).restrict(r)
        Gl = G.to_lattice(r)
        Ge = G.to_lattice(r, "stderr")
        pt.F, pt.F_se, _ = bootstrap_F(Gl, S, Ge, F_rel_se)
        pt.irb = irb_check(Gl, S, K, Ge)
    return pt


def _to_box(vol: Volume, vals: np.ndarray, r: int) -> LatticeFunction:
    d = vol.d
    arr = np.zeros((2 * r + 1,) * d)
    ok = np.all(np.abs(vol.sites) <= r, axis=1)
    arr[tuple((vol.sites[ok] + r).T)] = vals[ok]
    return LatticeFunction(d, r, arr)


# ---------------------------------------------------------------------------
# deconvolution on tori


@dataclass
class Deconvolution:
    L: int
    data: DysonData
    H: TorusFunction
    residual: float
    left_residual: float


def deconvolve(data: DysonData, L: int, check_radius: int = 1) -> Deconvolution:
    """H with D * H = -delta on the side-L torus, plus the real-space stencil
    residual H * D + delta on the box of radius `check_radius`."""
    T = TorusFunction.from_lattice(data.D, L)
    H, res = torus_deconvolve(T)
    r = check_radius
    sites = np.argwhere(np.ones((2 * r + 1,) * data.D.d, dtype=bool)) - r
    left = float(np.max(np.abs(stencil_residual(data.D, H, sites))))
    return Deconvolution(L, data, H, res, left)


@dataclass
class ComparisonReport:
    L: int
    mu: float
    sup_weighted: float
    sup_over_g: float
    worst: tuple


def compare_tilted(dec: Deconvolution, radius: int, g: float) -> ComparisonReport:
    """sup over the box of radius `radius` of |H - S_mu| <x>^{d-2}, with S_mu
    the infinite-volume tilted free Green's function, mu = (1 + sum D)/hatJ."""
    data = dec.data
    mu = data.mu
    S = tilted_green(data.kernel, mu, radius)
    Hl = dec.H.to_lattice(radius)
    wdiff = np.abs(Hl.values - S.values) * bracket(S.norm2()) ** (S.d - 2)
    i = np.unravel_index(np.argmax(wdiff), wdiff.shape)
    sup = float(wdiff[i])
    return ComparisonReport(dec.L, mu, sup, sup / g if g > 0 else math.inf,
                            tuple(int(v) - radius for v in i))


def near_critical_green(kernel: JumpKernel, Psi: LatticeFunction, sigma_D: float,
                        L: int) -> tuple:
    """G = w H on the torus for the Dyson data with the given Psi and a self
    loop tuned so that sum D = sigma_D < 0. Returns (G torus, data, residual)."""
    if sigma_D >= 0:
        raise ValueError("sigma_D must be negative")
    w = (1 + sigma_D) / (kernel.hatJ + Psi.sum())
    beta = kernel.hatJ - 1 / w
    data = assemble_dyson(kernel, beta, Psi)
    dec = deconvolve(data, L)
    G = TorusFunction(kernel.d, L, data.w * dec.H.values, True)
    return G, data, dec.residual


@dataclass
class DecayFit:
    exp_rms: float
    power_rms: float
    rate: float
    exponent: float

    @property
    def exponential(self) -> bool:
        return self.exp_rms < self.power_rms


def decay_fit(H: TorusFunction, rmin: int, rmax: int, prefactor: float | None = None) -> DecayFit:
    """Compare log H(r e_1) against a - r/xi - p0 log r (exponential, p0
    the Ornstein-Zernike power (d-1)/2 by default) and a - p log r (pure
    power) over rmin <= r <= rmax."""
    p0 = (H.d - 1) / 2 if prefactor is None else prefactor
    r = np.arange(rmin, rmax + 1)
    sites = np.zeros((len(r), H.d), dtype=np.int64)
    sites[:, 0] = r
    y = np.log(H.at(sites))
    lr = np.log(r)
    A = np.stack([np.ones_like(lr), -r], axis=1)
    ce, *_ = np.linalg.lstsq(A, y + p0 * lr, rcond=None)
    e_res = y + p0 * lr - A @ ce
    B = np.stack([np.ones_like(lr), -lr], axis=1)
    cp, *_ = np.linalg.lstsq(B, y, rcond=None)
    p_res = y - B @ cp
    return DecayFit(float(np.sqrt(np.mean(e_res ** 2))), float(np.sqrt(np.mean(p_res ** 2))),
                    float(ce[1]), float(cp[1]))
