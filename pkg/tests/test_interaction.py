import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lacelab.interaction import (Edwards, Phi4, VolumeTooLargeForQuadrature, lebowitz_check,
                                 make_model, mcmc_two_point)
from lacelab.kernel import Volume, nearest_neighbour
from lacelab.lattice_field import LatticeFunction
from oracles import PHI4_G01_NU0, PHI4_G01_NU05, PHI4_SINGLE_Z_NU05

K1 = nearest_neighbour(1)
SINGLE = Volume([[0]])
PAIR = Volume([[0], [1]])
TRIPLE = Volume([[0], [1], [2]])


def test_edwards_empty_sums():
    m = Edwards(0.3, 0.2)
    assert m.log_Z(PAIR, np.zeros(2)) == 0.0
    assert m.ratio_weight(PAIR, np.array([0.3, 0.1]), np.zeros(2)) == 1.0


def test_gaussian_Z():
    m = Phi4(0.0, 0.0, 1, K1)
    assert m.log_Z(PAIR, np.array([0.4, 1.3])) == 0.0
    z = math.exp(float(Phi4(0.0, 0.5, 1, K1).log_Z(SINGLE, np.zeros(1))))
    assert z == pytest.approx(PHI4_SINGLE_Z_NU05, rel=1e-12)
    assert z == pytest.approx(1.25 ** -0.5, rel=1e-12)


def test_phi4_ratio_at_zero_shift():
    m = Phi4(0.1, 0.2, 1, K1)
    assert m.ratio_weight(PAIR, np.array([0.2, 0.7]), np.zeros(2)) == pytest.approx(1.0, abs=1e-14)


@given(st.lists(st.floats(0, 2), min_size=6, max_size=6), st.floats(0, 1), st.floats(-0.5, 1))
def test_edwards_cocycle(v, g, nu):
    m = Edwards(g, nu)
    t, s, u = np.array(v[:2]), np.array(v[2:4]), np.array(v[4:])
    lhs = m.ratio_weight(PAIR, t, s) * m.ratio_weight(PAIR, t + s, u)
    assert lhs == pytest.approx(m.ratio_weight(PAIR, t, s + u), rel=1e-12, abs=1e-300)


@given(st.lists(st.floats(0, 3), min_size=4, max_size=4), st.floats(0, 1), st.floats(0, 1))
def test_edwards_ratio_bound(v, g, nu):
    m = Edwards(g, nu)
    t, s = np.array(v[:2]), np.array(v[2:])
    assert m.ratio_weight(PAIR, t, s) <= math.exp(-nu * s.sum()) * (1 + 1e-14)


def test_self_loops():
    assert Edwards(0.1, 0.3).self_loop(PAIR) == -0.3
    assert Phi4(0.0, 0.4, 1, K1).self_loop(SINGLE, (0,)) == pytest.approx(-0.4)
    g = 1e-4
    beta = Phi4(g, 0.0, 1, K1).self_loop(SINGLE, (0,))
    assert beta / g == pytest.approx(-0.5, rel=1e-3)


def test_vertices():
    e = Edwards(0.2, 0.0)
    assert e.vertex(PAIR, np.zeros(2), (0,), (0,)) == pytest.approx(-0.4)
    assert e.vertex(PAIR, np.zeros(2), (0,), (1,)) == 0.0
    p = Phi4(1e-4, 0.0, 1, K1)
    V = p.vertex_matrix(PAIR, np.zeros(2))
    assert V[0, 0] / 1e-4 == pytest.approx(-2, rel=1e-3)
    assert abs(V[0, 1]) < 1e-7


def test_vertex_bounds():
    vb = Edwards(0.2, 0.0).vertex_bound()
    assert vb(np.array([1]), np.array([1])) == pytest.approx(0.4)
    assert vb(np.array([1]), np.array([0])) == 0.0
    G = LatticeFunction(1, 1, np.array([1 / 3, 2 / 3, 1 / 3]))
    g = 0.1
    vb = Phi4(g, 0.0, 1, K1).vertex_bound(G)
    assert vb(np.array([0]), np.array([0])) == pytest.approx(2 * g * (1 + g * G.origin ** 2))


@given(st.lists(st.floats(0, 3), min_size=2, max_size=2), st.floats(0.01, 0.2))
def test_vertex_below_bound(tau, g):
    G = LatticeFunction(1, 1, np.array([1 / 3, 2 / 3, 1 / 3]))
    m = Phi4(g, 0.0, 1, K1)
    V = m.vertex_matrix(PAIR, np.array(tau))
    vb = m.vertex_bound(G)
    for x in range(2):
        for y in range(2):
            assert abs(V[x, y]) <= vb(np.array([x]), np.array([y])) * (1 + 1e-9)


@pytest.mark.parametrize("method", ["direct", "hs"])
def test_two_site_moments(method):
    m = Phi4(0.1, 0.5, 1, K1, method=method)
    two = m.two_point(PAIR)
    assert two[0, 1] == pytest.approx(PHI4_G01_NU05["phi0phi1"], rel=1e-7)
    assert two[0, 0] == pytest.approx(PHI4_G01_NU05["phi0sq"], rel=1e-7)
    mo = Phi4(0.1, 0.0, 1, K1, method=method).moments(PAIR)
    trunc = 4 * (mo["psipsi"][0, 1] - mo["psi"][0] * mo["psi"][1])
    assert trunc == pytest.approx(PHI4_G01_NU0["trunc_sq"], rel=1e-7)
    assert trunc >= 0


def test_lebowitz_gaussian_equality():
    rep = lebowitz_check(K1, PAIR, 0.0, 0.2, 1)
    assert abs(rep.upper_margin) < 1e-12
    assert rep.lower_margin > 0


@pytest.mark.parametrize("n", [1, 2])
def test_lebowitz_interacting(n):
    rep = lebowitz_check(K1, TRIPLE, 0.1, 0.0, n)
    assert rep.ok
    # x = y = u: the lower bound is the variance of phi_u^2
    for x, y, u, L, R in rep.rows:
        if x == y == u:
            assert L >= 0


def test_quadrature_volume_cap():
    with pytest.raises(VolumeTooLargeForQuadrature):
        Phi4(0.1, 0.0, 1, K1).two_point(Volume(np.arange(5)[:, None]))
    with pytest.raises(VolumeTooLargeForQuadrature):
        lebowitz_check(K1, Volume(np.arange(4)[:, None]), 0.1, 0.0, 1)


def test_make_model():
    assert isinstance(make_model("edwards", 0.1, 0.0), Edwards)
    assert isinstance(make_model("phi4", 0.1, 0.0, kernel=K1), Phi4)
    with pytest.raises(ValueError):
        make_model("phi4", 0.1, 0.0)
    with pytest.raises(ValueError):
        make_model("ising", 0.1, 0.0)


def test_mcmc_agrees_with_quadrature():
    r = mcmc_two_point(K1, PAIR, 0.1, 0.5, 1, sweeps=8000, chains=4, seed=1)
    exact = PHI4_G01_NU05["phi0phi1"]
    assert abs(r.mean[0, 1] - exact) <= 4 * r.stderr[0, 1]
    assert r.rhat < 1.1
