import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lacelab.ctrw import WalkPath
from lacelab.green_free import resolvent
from lacelab.interaction import Edwards, Phi4
from lacelab.kernel import Volume, nearest_neighbour
from lacelab.lace import (EnvelopeConstants, EtaTooLarge, Lace, PiEstimate, SymmetryViolated,
                          decay_envelope, diagram_bound, diagram_bound_matrix,
                          estimate_pi_m, expansion_residual, lace_measure, lace_weight,
                          sample_short_paths, symmetrize_pi)
from lacelab.lattice_field import LatticeFunction
from lacelab.montecarlo import estimate_green

K1 = nearest_neighbour(1)
K3 = nearest_neighbour(3)
LINE = Volume(np.arange(-2, 3)[:, None])


def still_path(T=10.0):
    return WalkPath(np.array([[0]]), np.zeros(0), T)


def test_lace_structure():
    L = Lace((0.1, 0.4, 0.7, 0.9))
    assert L.m == 2
    assert L.s == (0.1, 0.4, 0.9)
    assert L.sp == (0.1, 0.7, 0.9)
    assert L.intervals == [(0.1, 0.7), (0.4, 0.9)]
    assert Lace((0.3,)).m == 0
    for bad in [(), (-1.0,), (0.1, 0.2, 0.3), (0.2, 0.1)]:
        with pytest.raises(ValueError):
            Lace(bad)


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("ell", [0.5, 1.0, 2.5])
def test_lace_measure(m, ell):
    exact = ell ** (2 * m) / math.factorial(2 * m)
    assert lace_measure(ell, m) == pytest.approx(exact, rel=1e-10)
    cuts = np.array([0.0, 0.3 * ell, 0.35 * ell, ell])
    assert lace_measure(ell, m, cuts=cuts) == pytest.approx(exact, rel=1e-10)


def test_lace_weight_by_hand():
    g, nu = 0.2, 0.1
    model = Edwards(g, nu)
    p = still_path()
    assert lace_weight(model, None, p, Lace((0.5,))) == -nu
    w = lace_weight(model, None, p, Lace((0.5, 1.5)))
    assert w == pytest.approx(-2 * g * math.exp(-g - nu), rel=1e-14)
    # two intervals on one site: V = 4g^2, P = Y(0,2) Y(1,3) / Y(1,2)
    w2 = lace_weight(model, None, p, Lace((0.0, 0.5, 1.0, 3.0)))
    Y = lambda a, b: math.exp(-g * (b - a) ** 2 - nu * (b - a))
    assert w2 == pytest.approx(4 * g * g * Y(0, 1) * Y(0, 3) / Y(0, 1), rel=1e-12)
    hop = WalkPath(np.array([[0], [1]]), np.array([1.0]), 10.0)
    assert lace_weight(model, None, hop, Lace((0.2, 1.5))) == 0.0
    with pytest.raises(ValueError):
        lace_weight(model, None, p, Lace((0.5, 12.0)))


@pytest.mark.parametrize("nu", [0.3, -0.2])
def test_expansion_free_case_is_exact(nu):
    paths = sample_short_paths(K3, (0, 0, 0), 1.0, 5, seed=2)
    for p in paths:
        chk = expansion_residual(Edwards(0.0, nu), None, p, 1.0, 2)
        assert chk.residual < 1e-12
        assert all(t == 0.0 for t in chk.terms[1:])


def test_expansion_interacting():
    paths = sample_short_paths(K3, (0, 0, 0), 1.0, 10, seed=4)
    for p in paths:
        chk = expansion_residual(Edwards(0.1, 0.05), None, p, 1.0, 3)
        assert chk.ok
        assert chk.residual < 1e-6
    with pytest.raises(TypeError):
        expansion_residual(Phi4(0.1, 0.0, 1, K3), None, paths[0], 1.0, 2)


def test_remainder_shrinks_with_order():
    p = sample_short_paths(K3, (0, 0, 0), 1.0, 1, seed=1)[0]
    b = [expansion_residual(Edwards(0.1, 0.05), None, p, 1.0, m).remainder_bound for m in (1, 2, 3)]
    assert b[0] > b[1] > b[2]


def test_pi1_against_green():
    g = 0.1
    model = Edwards(g, 0.0)
    pi = estimate_pi_m(model, K1, LINE, 1, 20000, seed=1, sources=[(0,)], symmetrize=False)
    G = estimate_green(model, K1, LINE, (0,), 20000, seed=9)
    m, se = G[(0,)]
    p = pi[((0,), (0,))]
    assert abs(p.estimate + 2 * g * m) <= 4 * math.hypot(p.stderr, 2 * g * se)
    for y in [(-2,), (-1,), (1,), (2,)]:
        assert pi[((0,), y)].estimate == 0.0


@pytest.mark.parametrize("m", [1, 2])
def test_fast_and_cell_routes_agree(m):
    model = Edwards(0.1, 0.05)
    a = estimate_pi_m(model, K1, LINE, m, 200, seed=3, sources=[(0,)], method="fast",
                      symmetrize=False)
    b = estimate_pi_m(model, K1, LINE, m, 200, seed=3, sources=[(0,)], method="cells",
                      symmetrize=False)
    for k in a:
        assert a[k].estimate == pytest.approx(b[k].estimate, rel=1e-8, abs=1e-14)


def test_pi2_signs_and_symmetry():
    model = Edwards(0.1, 0.0)
    pi = estimate_pi_m(model, K1, LINE, 2, 4000, seed=5)
    for (x, y), e in pi.items():
        assert e.estimate >= 0
        assert e.estimate == pi[(y, x)].estimate


def test_symmetrize_rejects_disagreement():
    est = {((0,), (1,)): PiEstimate(1, ((0,), (1,)), 1.0, 0.01, 10),
           ((1,), (0,)): PiEstimate(1, ((1,), (0,)), 2.0, 0.01, 10)}
    with pytest.raises(SymmetryViolated):
        symmetrize_pi(est)
    out = symmetrize_pi(est, strict=False)
    assert out[((0,), (1,))].estimate == 1.5


@given(st.integers(1, 3), st.integers(0, 10**6))
def test_diagram_matrix_against_brute_force(m, seed):
    rng = np.random.default_rng(seed)
    n = 4
    A = rng.random((n, n))
    G = A + A.T
    V = rng.random((n, n))
    fast = diagram_bound_matrix(G, V, m)
    slow = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            if m == 1:
                slow[x, y] = G[x, y] * V[x, y]
                continue
            total = 0.0
            for inner in np.ndindex(*([n] * (2 * (m - 1)))):
                xs = [inner[2 * j] for j in range(m - 1)] + [y]
                xp = [inner[2 * j + 1] for j in range(m - 1)] + [y]
                t = G[x, xs[0]] * V[x, xp[0]]
                for j in range(m - 1):
                    t *= G[xs[j], xp[j]] * G[xp[j], xs[j + 1]] * V[xs[j], xp[j + 1]]
                total += t
            slow[x, y] = total
    assert np.allclose(fast, slow, rtol=1e-12)


def test_diagram_bound_routes():
    vol = Volume(np.arange(-3, 4)[:, None])
    G = resolvent(K1, vol, 0.5)
    r = 3
    vals = np.array([G[3, 3 + abs(k)] if abs(k) <= 3 else 0 for k in range(-r, r + 1)])
    Gl = LatticeFunction(1, r, vals)
    vb = Edwards(0.1, 0.0).vertex_bound()
    assert diagram_bound(Gl, vb, 1, (0,), (0,)) == pytest.approx(0.2 * G[3, 3])
    assert diagram_bound(Gl, vb, 2, (0,), (1,)) == pytest.approx(0.04 * Gl((1,)) ** 3)
    # m = 2 by the diagonal shortcut and by the matrix route on the finite volume
    fin = diagram_bound(G, vb, 2, (0,), (1,), volume=vol)
    assert fin == pytest.approx(0.04 * G[3, 4] ** 3)
    with pytest.raises(ValueError):
        diagram_bound(G, vb, 2, (0,), (1,))


def test_decay_envelope():
    c = EnvelopeConstants(K=1.0, CJ_tilde=2.0, C_conv=3.0)
    assert c.K1 == 2.0 and c.c1 == 20.0 and c.c2 == 60.0
    eta = 1e-3
    amps = [decay_envelope(m, 1.0, eta, 5, c).amplitude for m in (1, 2, 3)]
    assert amps[0] > amps[1] > amps[2]
    total = decay_envelope(0, 1.0, eta, 5, c).amplitude
    assert total == pytest.approx(sum(c.c1 * (c.c2 * eta) ** m for m in range(1, 200)))
    env = decay_envelope(1, 1.0, eta, 5, c)
    assert env(np.array([2, 0, 0, 0, 0])) == pytest.approx(amps[0] * 2.0 ** -9)
    assert env(np.zeros(5)) == pytest.approx(amps[0])
    with pytest.raises(EtaTooLarge):
        decay_envelope(0, 1.0, 1 / 60, 5, c)
