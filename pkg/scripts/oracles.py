"""Independent reference values for the test suite.

Nothing here imports lacelab. Each value is computed by a route different
from the package's own; the printed numbers are frozen into tests/oracles.py.

    python3 scripts/oracles.py
"""

import itertools
import json
import math

import numpy as np
from scipy import integrate, special, stats


def return_probabilities(d: int, N: int) -> np.ndarray:
    """p_n(0) of the discrete-time simple random walk on Z^d, n <= N.

    Steps are allocated to the first coordinate Binomial(n, 1/d); the rest
    form a (d-1)-dimensional walk. One-dimensional returns are C(m, m/2)/2^m.
    """
    m = np.arange(N + 1)
    q = np.where(m % 2 == 0, np.exp(special.gammaln(m + 1) - 2 * special.gammaln(m / 2 + 1)
                                    - m * math.log(2)), 0.0)
    p = q.copy()
    for k in range(2, d + 1):
        new = np.empty(N + 1)
        for n in range(N + 1):
            j = np.arange(n + 1)
            new[n] = np.dot(stats.binom.pmf(j, n, 1 / k) * q[j], p[n - j])
        p = new
    return p


def srw_S0(d: int, N: int = 10_000) -> dict:
    """S(0) = (1/hatJ) sum_n p_n(0), hatJ = 2d, plus the local CLT tail
    p_n ~ 2 (d / (2 pi n))^{d/2} on even n."""
    p = return_probabilities(d, N)
    head = float(p.sum())
    tail = (d / (2 * math.pi)) ** (d / 2) * N ** (1 - d / 2) / (d / 2 - 1)
    return {"S0": (head + tail) / (2 * d), "tail": tail / (2 * d)}


def continuum_constant(d: int) -> float:
    """Green's function of -Laplacian in R^d: Gamma(d/2 - 1) / (4 pi^{d/2})."""
    return math.gamma(d / 2 - 1) / (4 * math.pi ** (d / 2))


def lattice_power_sum(d: int, p: float, R: int) -> float:
    """sum over the box |w|_inf <= R of max(|w|, 1)^{-p}, by brute force over
    the first two coordinates with the rest as a dense block."""
    ax = np.arange(-R, R + 1)
    table = np.maximum(np.sqrt(np.arange(d * R * R + 1, dtype=float)), 1.0) ** (-p)
    rest = np.zeros((2 * R + 1,) * (d - 2), dtype=np.int64)
    for i in range(d - 2):
        shape = [1] * (d - 2)
        shape[i] = -1
        rest = rest + (ax ** 2).reshape(shape)
    total = 0.0
    for a in ax:
        for b in ax:
            total += float(table[rest + a * a + b * b].sum())
    return total


def distinct_images(x) -> int:
    d = len(x)
    out = set()
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            out.add(tuple(s * x[i] for s, i in zip(signs, perm)))
    return len(out)


def conv_e_origin_head(d: int, R: int) -> float:
    """sum_{|a|,|b| <= R} <a>^{6-3d} <b-a>^{2-d} <b>^{6-3d}: one orbit
    representative per a, weighted by its orbit size."""
    ax = np.arange(-R, R + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    b = np.stack([g.ravel() for g in grids], axis=1).astype(float)
    wb = np.maximum(np.sqrt(np.sum(b ** 2, axis=1)), 1.0) ** (6 - 3 * d)
    total = 0.0
    for rep in itertools.combinations_with_replacement(range(R + 1), d):
        a = np.array(rep, dtype=float)
        na = max(math.sqrt(float(a @ a)), 1.0)
        diff = np.sqrt(np.sum((b - a) ** 2, axis=1))
        s = float(np.dot(wb, np.maximum(diff, 1.0) ** (2 - d)))
        total += distinct_images(rep) * na ** (6 - 3 * d) * s
    return total


def phi4_two_site(g: float, nu: float) -> dict:
    """Moments of the n=1 measure exp(-phi.C^{-1}phi/2 - g psi^2 - nu psi),
    psi = phi^2/2, on the d=1 two-site volume with C^{-1} = [[2,-1],[-1,2]]."""
    L = 9.0

    def dens(x, y):
        px, py = x * x / 2, y * y / 2
        return math.exp(-(2 * x * x - 2 * x * y + 2 * y * y) / 2
                        - g * (px * px + py * py) - nu * (px + py))

    def E(f):
        v, _ = integrate.dblquad(lambda y, x: f(x, y) * dens(x, y), -L, L, -L, L,
                                 epsabs=1e-13, epsrel=1e-12)
        return v

    Z = E(lambda x, y: 1.0)
    two01 = E(lambda x, y: x * y) / Z
    sq0 = E(lambda x, y: x * x) / Z
    sq01 = E(lambda x, y: x * x * y * y) / Z
    return {"phi0phi1": two01, "phi0sq": sq0, "trunc_sq": sq01 - sq0 * sq0}


def phi4_single_site_Z(nu: float) -> float:
    """E exp(-nu phi^2 / 2) for phi ~ N(0, 1/2)."""
    f = lambda x: math.exp(-x * x) / math.sqrt(math.pi) * math.exp(-nu * x * x / 2)
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-14)[0]


def edwards_two_site(g: float, nu: float, kmax: int = 40) -> list:
    """G(0, b), b = 0, 1, for the Edwards walk on {0, 1} in d = 1 (rates 1 to
    each neighbour, so the walk leaves {0, 1} at rate 1 from either site).

    Sum over the number k of completed holding intervals. The earlier
    intervals at the current site add up to a Gamma(n_s, 2) time T_s, those
    at the other site to a Gamma(n_o, 2) time T_o; each completed interval
    ends inside with probability 1/2, and the open interval contributes
    int_0^inf e^{-2h} R(T_s + h, T_o) dh.
    """
    def inner(ts, to):
        # int_0^inf exp(-c h - g (ts + h)^2) dh in closed form, c = 2 + nu
        c = 2 + nu
        z = math.sqrt(g) * ts + c / (2 * math.sqrt(g))
        own = 0.5 * math.sqrt(math.pi / g) * special.erfcx(z) * math.exp(-g * ts * ts - nu * ts)
        return own * math.exp(-g * to * to - nu * to)

    def gamma_pdf(n, t):
        return 2 ** n * t ** (n - 1) * math.exp(-2 * t) / math.factorial(n - 1)

    out = [0.0, 0.0]
    for k in range(kmax + 1):
        ns, no = k // 2, (k + 1) // 2
        if ns == 0 and no == 0:
            val = inner(0.0, 0.0)
        elif ns == 0:
            val = integrate.quad(lambda to: gamma_pdf(no, to) * inner(0.0, to), 0, np.inf,
                                 epsabs=1e-14, epsrel=1e-11)[0]
        else:
            val = integrate.dblquad(lambda ts, to: gamma_pdf(no, to) * gamma_pdf(ns, ts)
                                    * inner(ts, to), 0, 60, 0, 60,
                                    epsabs=1e-13, epsrel=1e-10)[0]
        out[k % 2] += 0.5 ** k * val
    return out


def free_hara_K0(d: int, n: int = 21) -> float:
    """min over a grid of [-pi, pi]^d of (1 - mean_i cos k_i) / |k|^2, k != 0."""
    ax = np.linspace(-math.pi, math.pi, n)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    c = sum(np.cos(g) for g in grids) / d
    k2 = sum(g ** 2 for g in grids)
    ok = k2 > 1e-12
    return float(np.min((1 - c[ok]) / k2[ok]))


def main():
    out = {}
    out["srw_S0_d5"] = srw_S0(5)
    out["srw_S0_d3"] = srw_S0(3)
    out["continuum_constant_d5"] = continuum_constant(5)
    out["orbit_110"] = distinct_images((1, 1, 0))
    out["power_sum_d5"] = {f"p{p}_R{R}": lattice_power_sum(5, p, R) for p in (7, 9, 12) for R in (20, 40)}
    out["conv_e_head_d5_R8"] = conv_e_origin_head(5, 8)
    out["phi4_two_site_g0.1_nu0.5"] = phi4_two_site(0.1, 0.5)
    out["phi4_two_site_g0.1_nu0"] = phi4_two_site(0.1, 0.0)
    out["phi4_single_site_Z_nu0.5"] = phi4_single_site_Z(0.5)
    out["edwards_two_site_g0.1_nu0"] = edwards_two_site(0.1, 0.0)
    out["free_hara_K0_d5"] = free_hara_K0(5)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
