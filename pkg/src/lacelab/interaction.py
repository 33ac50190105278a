"""Edwards and n-component phi^4 interactions: partition functions Z_t,
ratio weights, self-loops, vertex functions and vertex bounds."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .green_free import free_green_finite
from .kernel import JumpKernel, Volume
from .rng import generator


class VolumeTooLargeForQuadrature(ValueError):
    pass


class QuadratureNotConverged(RuntimeError):
    pass


class InequalityViolated(AssertionError):
    def __init__(self, triple, margin):
        super().__init__(f"violated at {triple} by {margin:.3e}")
        self.triple = triple
        self.margin = margin


class McmcNotEquilibrated(RuntimeError):
    pass


QUAD_MAX_SITES = 4
QUAD_RTOL = 1e-8
QUAD_MIN_ORDER = 20
EVAL_BLOCK = 2_000_000  # tilts x nodes per batch in log Z


@dataclass(frozen=True)
class Edwards:
    g: float
    nu: float
    name: str = field(default="edwards", init=False)

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("g must be nonnegative")

    def log_Z(self, volume: Volume, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return -self.g * np.sum(t ** 2, axis=-1) - self.nu * np.sum(t, axis=-1)

    def ratio_weight(self, volume: Volume, t, s) -> np.ndarray:
        """Z_{t+s}/Z_t = exp(-g sum(2 t s + s^2) - nu sum s)."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return np.exp(-self.g * np.sum(2 * t * s + s ** 2, axis=-1) - self.nu * np.sum(s, axis=-1))

    def self_loop(self, volume: Volume, x=None) -> float:
        return -self.nu

    def vertex(self, volume: Volume, tau, x, y) -> float:
        return -2 * self.g * float(tuple(x) == tuple(y))

    def vertex_bound(self, G=None):
        g = self.g
        return lambda x, y: 2 * g * np.all(np.asarray(x) == np.asarray(y), axis=-1).astype(float)

    @property
    def c_star(self) -> float:
        return 2.0

    @property
    def eta(self) -> float:
        return self.c_star * self.g


# ---------------------------------------------------------------------------
# phi^4 quadrature


def _hermite(order: int):
    """Probabilists' Gauss-Hermite nodes and weights normalised to N(0,1)."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / math.sqrt(2 * math.pi)


def _tensor_nodes(order: int, dims: int, prune: float = 1e-18):
    x, w = _hermite(order)
    nodes = np.zeros((1, 0))
    weights = np.ones(1)
    for _ in range(dims):
        nodes = np.concatenate(
            [np.repeat(nodes, order, axis=0), np.tile(x, len(weights))[:, None]], axis=1)
        weights = np.outer(weights, w).ravel()
        keep = weights > prune * weights.max()
        nodes, weights = nodes[keep], weights[keep]
    return nodes, weights


def _blocked_sum(weights, t: np.ndarray, q: int) -> np.ndarray:
    """sum over nodes of weights(t), over row blocks of t to bound memory."""
    if t.ndim < 2:
        return np.sum(weights(t), axis=-1)
    flat = t.reshape(-1, t.shape[-1])
    step = max(1, EVAL_BLOCK // q)
    out = np.concatenate([np.sum(weights(flat[i:i + step]), axis=-1)
                          for i in range(0, len(flat), step)])
    return out.reshape(t.shape[:-1])


class _DirectRule:
    """Gauss-Hermite in the eigen-coordinates of the covariance C:
    phi^i = U sqrt(lambda) xi^i with xi standard normal."""

    def __init__(self, C: np.ndarray, g: float, nu: float, n: int, order: int):
        lam, U = linalg.eigh(C)
        k = len(C)
        xi, w = _tensor_nodes(order, n * k)
        xi = xi.reshape(len(w), n, k)
        phi = np.einsum("xj,qij->qxi", U * np.sqrt(lam), xi)  # (q, site, component)
        self.phi = phi
        self.psi = 0.5 * np.sum(phi ** 2, axis=2)
        logb = np.log(w) - np.sum(g * self.psi ** 2 + nu * self.psi, axis=1)
        self.shift = float(logb.max())
        self.b = np.exp(logb - self.shift)
        self.g, self.nu = g, nu

    def weights(self, t: np.ndarray) -> np.ndarray:
        """Unnormalised tilted node weights, shape (..., q)."""
        t = np.atleast_1d(t)
        return self.b * np.exp(-2 * self.g * (t @ self.psi.T))

    def log_Z(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        base = -np.sum(self.g * t ** 2 + self.nu * t, axis=-1)
        return base + self.shift + np.log(_blocked_sum(self.weights, t, len(self.b)))

    def moments(self, t: np.ndarray) -> dict:
        w = self.weights(np.asarray(t, dtype=float))
        w = w / w.sum()
        phi, psi = self.phi, self.psi
        two = np.einsum("q,qxi,qyi->xy", w, phi, phi)
        e_psi = w @ psi
        psipsi = np.einsum("q,qx,qy->xy", w, psi, psi)
        dots = np.einsum("qxi,qyi->qxy", phi, phi)
        four = np.einsum("q,qxy,qu->xyu", w, dots, 2 * psi)
        return {"two": two, "psi": e_psi, "psipsi": psipsi, "four": four}


class _HSRule:
    """Hubbard-Stratonovich: exp(-g psi^2) = E_z exp(i sqrt(2g) z psi), then
    the Gaussian phi-integral is explicit with complex covariance
    M = (C^{-1} - A)^{-1}, A = diag(i sqrt(2g) z - nu)."""

    def __init__(self, C: np.ndarray, g: float, nu: float, n: int, order: int):
        k = len(C)
        lam = linalg.eigvalsh(np.eye(k) + nu * C)
        if lam.min() <= 0:
            raise QuadratureNotConverged("I + nu C is not positive definite")
        z, w = _tensor_nodes(order, k)
        a = 1j * math.sqrt(2 * g) * z - nu
        Ch = linalg.sqrtm(C).real
        K = np.eye(k)[None] - np.einsum("xy,qy,yz->qxz", Ch, a, Ch)
        ev = np.linalg.eigvals(K)
        self.det = np.prod(ev ** (-n / 2), axis=1)
        Cinv = linalg.inv(C)
        self.M = np.linalg.inv(Cinv[None] - a[:, :, None] * np.eye(k)[None])
        self.a, self.w, self.n = a, w, n

    def weights(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.w * self.det * np.exp(t @ self.a.T)

    def log_Z(self, t: np.ndarray) -> np.ndarray:
        return np.log(np.real(_blocked_sum(self.weights, np.asarray(t, dtype=float), len(self.w))))

    def moments(self, t: np.ndarray) -> dict:
        w = self.weights(np.asarray(t, dtype=float))
        w = w / np.sum(w)
        M, n = self.M, self.n
        diag = np.einsum("qxx->qx", M)
        two = n * np.einsum("q,qxy->xy", w, M)
        e_psi = 0.5 * n * (w @ diag)
        psipsi = 0.25 * np.einsum("q,qx,qy->xy", w, n * n * diag, diag) \
            + 0.5 * n * np.einsum("q,qxy->xy", w, M ** 2)
        four = n * n * np.einsum("q,qxy,qu->xyu", w, M, diag) \
            + 2 * n * np.einsum("q,qxu,qyu->xyu", w, M, M)
        out = {"two": two, "psi": e_psi, "psipsi": psipsi, "four": four}
        return {k: np.real(v) for k, v in out.items()}


@dataclass(eq=False)
class Phi4:
    """n-component g|phi|^4 model; Z_t by Gauss-Hermite quadrature on small volumes."""

    g: float
    nu: float
    n: int
    kernel: JumpKernel
    quad_order: int = 32
    method: str = "auto"
    name: str = field(default="phi4", init=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.g < 0:
            raise ValueError("g must be nonnegative")
        if self.method not in ("auto", "direct", "hs"):
            raise ValueError(f"unknown quadrature method {self.method!r}")

    def covariance(self, volume: Volume) -> np.ndarray:
        return free_green_finite(self.kernel, volume).matrix

    def _choose(self, volume: Volume) -> str:
        if self.method != "auto":
            return self.method
        # the HS rule needs |Lambda| dimensions whatever n is
        return "direct" if self.n == 1 else "hs"

    def _order(self, method: str, volume: Volume) -> int:
        dims = len(volume) * (self.n if method == "direct" else 1)
        cap = int(math.floor(4e6 ** (1 / dims)))
        return max(8, min(self.quad_order, cap))

    def rule(self, volume: Volume, method: str | None = None):
        if len(volume) > QUAD_MAX_SITES:
            raise VolumeTooLargeForQuadrature(f"|Lambda| = {len(volume)} > {QUAD_MAX_SITES}")
        method = method or self._choose(volume)
        key = (id(volume), method)
        if key not in self._cache:
            C = self.covariance(volume)
            q_max = self._order(method, volume)
            cls = _DirectRule if method == "direct" else _HSRule
            probe = np.stack([np.zeros(len(volume)), np.full(len(volume), 0.5)])
            # smallest order on the ladder that agrees with 3/4 of itself
            ladder = sorted(set(range(min(QUAD_MIN_ORDER, q_max), q_max, 4)) | {q_max})
            for q in ladder:
                rule = cls(C, self.g, self.nu, self.n, q)
                qc = max(4, (3 * q) // 4)
                coarse = cls(C, self.g, self.nu, self.n, qc)
                diff = np.max(np.abs(rule.log_Z(probe) - coarse.log_Z(probe)))
                if diff <= QUAD_RTOL:
                    break
            else:
                raise QuadratureNotConverged(f"order {q} vs {qc}: log Z differs by {diff:.2e}")
            self._cache[key] = (volume, rule)
        return self._cache[key][1]

    def log_Z(self, volume: Volume, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.g == 0:
            # Gaussian: Z_t = exp(-nu sum t) det(I + nu C)^{-n/2}
            C = self.covariance(volume)
            ld = np.linalg.slogdet(np.eye(len(volume)) + self.nu * C)[1]
            return -self.nu * np.sum(t, axis=-1) - 0.5 * self.n * ld
        return self.rule(volume).log_Z(t)

    def ratio_weight(self, volume: Volume, t, s) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.exp(self.log_Z(volume, t + np.asarray(s, dtype=float)) - self.log_Z(volume, t))

    def moments(self, volume: Volume, t=None, method: str | None = None) -> dict:
        t = np.zeros(len(volume)) if t is None else np.asarray(t, dtype=float)
        return self.rule(volume, method).moments(t)

    def two_point(self, volume: Volume, t=None, method: str | None = None) -> np.ndarray:
        """<phi_a . phi_b>_t / n for all pairs."""
        return self.moments(volume, t, method)["two"] / self.n

    def self_loop(self, volume: Volume, x) -> float:
        i = volume.index[tuple(x)]
        m = self.moments(volume)
        return -self.nu - self.g * 2 * float(m["psi"][i])

    def vertex_matrix(self, volume: Volume, tau) -> np.ndarray:
        """V(x, y) = -2g 1{x=y} + g^2 <|phi_x|^2; |phi_y|^2>_tau on the volume."""
        m = self.moments(volume, tau)
        trunc = 4 * (m["psipsi"] - np.outer(m["psi"], m["psi"]))
        return -2 * self.g * np.eye(len(volume)) + self.g ** 2 * trunc

    def vertex(self, volume: Volume, tau, x, y) -> float:
        V = self.vertex_matrix(volume, tau)
        return float(V[volume.index[tuple(x)], volume.index[tuple(y)]])

    @property
    def c_star(self) -> float:
        return 2.0 * max(1, self.n ** 2)

    def c_star_conservative(self, G0: float) -> float:
        return self.c_star * max(1.0, self.g * G0)

    @property
    def eta(self) -> float:
        return self.c_star * self.g

    def vertex_bound(self, G):
        """V_bar(x, y) = 2g(1{x=y} + n^2 g G(x-y)^2), G a LatticeFunction."""
        g, n = self.g, self.n

        def vbar(x, y):
            x = np.asarray(x)
            y = np.asarray(y)
            same = np.all(x == y, axis=-1).astype(float)
            return 2 * g * (same + n * n * g * G.at(y - x) ** 2)

        return vbar


def make_model(name: str, g: float, nu: float, n: int = 1, kernel: JumpKernel | None = None,
               quad_order: int = 32):
    if name == "edwards":
        return Edwards(g, nu)
    if name == "phi4":
        if kernel is None:
            raise ValueError("phi4 needs a kernel for its covariance")
        return Phi4(g, nu, n, kernel, quad_order)
    raise ValueError(f"unknown model {name!r}")


# ---------------------------------------------------------------------------
# inequality checks


@dataclass
class LebowitzReport:
    lower_margin: float
    upper_margin: float
    worst_lower: tuple
    worst_upper: tuple
    rows: list

    @property
    def ok(self) -> bool:
        return self.lower_margin >= -QUAD_RTOL and self.upper_margin >= -QUAD_RTOL


def lebowitz_check(kernel: JumpKernel, volume: Volume, g: float, nu: float, n: int,
                   t=None, strict: bool = True, method: str | None = None) -> LebowitzReport:
    """0 <= <phi_x.phi_y; phi_u.phi_u>_t <= 2 <phi_x.phi_u>_t <phi_y.phi_u>_t at
    all site triples."""
    if len(volume) > 3:
        raise VolumeTooLargeForQuadrature("Lebowitz check is for |Lambda| <= 3")
    model = Phi4(g, nu, n, kernel)
    k = len(volume)
    t = np.zeros(k) if t is None else np.asarray(t, dtype=float)
    if g == 0:
        C = linalg.inv(linalg.inv(model.covariance(volume)) + np.diag(np.full(k, nu)))
        two = n * C
        trunc = 2 * n * np.einsum("xu,yu->xyu", C, C)
    else:
        m = model.moments(volume, t, method)
        two = m["two"]
        trunc = m["four"] - np.einsum("xy,u->xyu", two, 2 * m["psi"])
    rows = []
    lo, hi = math.inf, math.inf
    wl = wu = None
    for x, y, u in itertools.product(range(k), repeat=3):
        L = float(trunc[x, y, u])
        R = 2 * float(two[x, u] * two[y, u])
        rows.append((x, y, u, L, R))
        scale = max(abs(R), 1e-300)
        if L / scale < lo:
            lo, wl = L / scale, (x, y, u)
        if (R - L) / scale < hi:
            hi, wu = (R - L) / scale, (x, y, u)
    rep = LebowitzReport(lo, hi, wl, wu, rows)
    if strict and not rep.ok:
        bad = wl if lo < hi else wu
        raise InequalityViolated(bad, min(lo, hi))
    return rep


# ---------------------------------------------------------------------------
# Metropolis sampling of the spin measure for volumes beyond quadrature


@dataclass
class McmcResult:
    mean: np.ndarray
    stderr: np.ndarray
    rhat: float
    tau_int: float
    sweeps: int


def _iat(x: np.ndarray) -> float:
    """Integrated autocorrelation time by the initial positive sequence."""
    x = x - x.mean()
    n = len(x)
    f = np.fft.rfft(x, 2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n]
    if ac[0] <= 0:
        return 1.0
    ac = ac / ac[0]
    tau = 1.0
    for k in range(1, n // 2, 2):
        pair = ac[k] + ac[k + 1] if k + 1 < n else ac[k]
        if pair <= 0:
            break
        tau += 2 * pair
    return tau


def mcmc_two_point(kernel: JumpKernel, volume: Volume, g: float, nu: float, n: int,
                   t=None, sweeps: int = 20000, chains: int = 4, seed: int = 0,
                   step: float = 1.0, burn: float = 0.2) -> McmcResult:
    """<phi_a . phi_b>_t / n by single-site Metropolis, vectorised over chains.

    Returns the mean matrix, its standard error (autocorrelation corrected),
    and the Gelman-Rubin statistic computed on the trace of the matrix.
    """
    k = len(volume)
    t = np.zeros(k) if t is None else np.asarray(t, dtype=float)
    A = -_generator(kernel, volume)
    rng = generator(seed, 17)
    phi = rng.normal(size=(chains, k, n)) * 0.5
    diag = np.diag(A)

    def local_action(phi_x, x, field):
        psi = 0.5 * np.sum(phi_x ** 2, axis=-1)
        quad = 0.5 * diag[x] * np.sum(phi_x ** 2, axis=-1) + np.sum(phi_x * field, axis=-1)
        return quad + g * (psi + t[x]) ** 2 + nu * (psi + t[x])

    n_keep = int(sweeps * (1 - burn))
    trace = np.zeros((chains, n_keep))
    acc_sum = np.zeros((chains, k, k))
    acc_sq = []
    for s in range(sweeps):
        for x in range(k):
            field = np.einsum("y,cyi->ci", A[x], phi) - diag[x] * phi[:, x, :]
            old = phi[:, x, :]
            new = old + step * rng.normal(size=old.shape)
            dS = local_action(new, x, field) - local_action(old, x, field)
            accept = np.log(rng.random(chains)) < -dS
            phi[accept, x, :] = new[accept]
        if s >= sweeps - n_keep:
            m = np.einsum("cxi,cyi->cxy", phi, phi) / n
            acc_sum += m
            j = s - (sweeps - n_keep)
            trace[:, j] = np.einsum("cxx->c", m)
            acc_sq.append(m)
    samples = np.stack(acc_sq, axis=1)  # (chains, n_keep, k, k)
    mean = samples.mean(axis=(0, 1))
    tau = max(_iat(trace[c]) for c in range(chains))
    var = samples.reshape(-1, k, k).var(axis=0)
    stderr = np.sqrt(var * tau / (chains * n_keep))
    cm = trace.mean(axis=1)
    W = trace.var(axis=1, ddof=1).mean()
    B = n_keep * cm.var(ddof=1)
    rhat = math.sqrt(((n_keep - 1) / n_keep * W + B / n_keep) / W) if W > 0 else 1.0
    if rhat > 1.1:
        raise McmcNotEquilibrated(f"Gelman-Rubin statistic {rhat:.3f} > 1.1")
    return McmcResult(mean, stderr, rhat, tau, sweeps)


def _generator(kernel, volume):
    from .kernel import generator_matrix

    return generator_matrix(kernel, volume)
