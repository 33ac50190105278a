import numpy as np
import pytest

from lacelab.dyson import (ConditionFailed, NotMember, SelfLoopTooLarge, assemble_dyson,
                           bootstrap_F, check_class_membership, compare_tilted, decay_fit,
                           deconvolve, dyson_residual, dyson_residual_matrix, hara_conditions,
                           hara_Q, irb_check, near_critical_green, simon_check, simon_free,
                           symmetrize)
from lacelab.green_free import free_green_infinite, resolvent, tilted_green
from lacelab.kernel import Volume, nearest_neighbour, range2
from lacelab.lattice_field import LatticeFunction
from oracles import FREE_HARA_K0_D5

K1 = nearest_neighbour(1)
K3 = nearest_neighbour(3)
K5 = nearest_neighbour(5)


def bump(d, r, scale):
    v = np.zeros((2 * r + 1,) * d)
    v[(r,) * d] = scale
    return LatticeFunction(d, r, v)


def test_assemble_free():
    data = assemble_dyson(K3, 0.0)
    assert data.w == pytest.approx(1 / 6)
    assert data.sum_D == pytest.approx(0.0, abs=1e-14)
    assert data.mu == pytest.approx(1 / 6)
    nu = 0.5
    data = assemble_dyson(K3, -nu)
    assert data.sum_D == pytest.approx(6 / 6.5 - 1)
    with pytest.raises(SelfLoopTooLarge):
        assemble_dyson(K3, 6.0)


def test_assemble_with_psi():
    Psi = bump(3, 1, -0.1)
    data = assemble_dyson(K3, 0.05, Psi)
    assert data.sum_D == pytest.approx(data.w * (6 - 0.1) - 1)
    assert data.D.r == 1


def test_membership():
    data = assemble_dyson(K3, -0.2)
    rep = check_class_membership(data.D, K3, C=1.0, g=0.1)
    assert rep.z == pytest.approx(data.w)
    assert rep.min_margin >= 0
    v = data.D.values.copy()
    v[0, 1, 1] += 1e-3
    with pytest.raises(NotMember) as e:
        check_class_membership(LatticeFunction(3, 1, v), K3, 1.0, 0.1)
    assert e.value.item == "i"
    with pytest.raises(NotMember) as e:
        check_class_membership(data.D + bump(3, 1, 0.5), K3, 1.0, 0.1)
    assert e.value.item == "ii"
    far = assemble_dyson(K3, -0.2, radius=3).D
    w = far.values.copy()
    for s in [(0, 3, 3), (6, 3, 3), (3, 0, 3), (3, 6, 3), (3, 3, 0), (3, 3, 6)]:
        w[s] -= 1e-3
    with pytest.raises(NotMember) as e:
        check_class_membership(LatticeFunction(3, 3, w), K3, 1.0, 1e-3, z=far.values[3, 3, 4])
    assert e.value.item == "iii"


def test_finite_residuals():
    vol = Volume.box(2, 5)
    k = nearest_neighbour(2)
    S = resolvent(k, vol, 0.0)
    nu = 0.3
    G = resolvent(k, vol, nu)
    assert dyson_residual_matrix(G, S, -nu * np.eye(len(vol))) < 1e-12
    assert dyson_residual_matrix(S, S, np.zeros_like(S)) == 0.0


def test_infinite_residual_of_free_green():
    S = free_green_infinite(K5, 4).S
    res = dyson_residual(S, K5, 0.0, LatticeFunction(5, 0, np.zeros((1,) * 5)))
    assert res.residual < 1e-10
    z = 0.15
    # (1/z) G - J_+ * G = delta for G = z S_z
    St = tilted_green(K3, z, 6).scale(z)
    res = dyson_residual(St, K3, 6 - 1 / z, LatticeFunction(3, 0, np.zeros((1,) * 3)))
    assert res.residual < 1e-10


def test_hara_free():
    rep = hara_conditions(hara_Q(K5))
    assert all(rep.passed.values())
    assert rep.K0 == pytest.approx(FREE_HARA_K0_D5, rel=1e-9)
    assert rep.H1 < 1e-14


def test_hara_normalisation_failure():
    Q = hara_Q(K5).scale(0.9)
    with pytest.raises(ConditionFailed) as e:
        hara_conditions(Q)
    assert e.value.name == "H1"
    rep = hara_conditions(Q, strict=False)
    assert not rep.passed["H1"]


def test_hara_range2():
    rep = hara_conditions(hara_Q(range2(3)))
    assert all(rep.passed.values())


def test_bootstrap_and_irb():
    S = free_green_infinite(K5, 3).S
    G = S.scale(2.0)
    F, F_se, _ = bootstrap_F(G, S)
    assert F == pytest.approx(2.0)
    assert F_se == 0.0
    # a badly resolved site is left out of the maximum
    g = G.values.copy()
    g[0, 0, 0, 0, 0] *= 10
    se = np.zeros_like(g)
    se[0, 0, 0, 0, 0] = g[0, 0, 0, 0, 0]
    F, _, _ = bootstrap_F(g, S.values, se, max_rel_se=0.1)
    assert F == pytest.approx(2.0)
    assert irb_check(G, S, 2.0).passed
    assert not irb_check(S.scale(3.0), S, 2.0).passed
    with pytest.raises(ValueError):
        bootstrap_F(G, free_green_infinite(K5, 2).S)


def test_simon():
    vol = Volume(np.arange(-4, 5)[:, None])
    inner = Volume(np.arange(-1, 2)[:, None])
    rep = simon_free(K1, vol, inner, (0,), (3,), nu=0.2)
    assert rep.passed()
    assert rep.pairs == 2
    with pytest.raises(ValueError):
        simon_check(K1, vol, inner, (3,), (0,), np.ones(9), np.ones(9))


def test_deconvolution_free():
    data = assemble_dyson(K3, -0.5)
    dec = deconvolve(data, 32)
    assert dec.residual < 1e-12
    assert dec.left_residual < 1e-12
    rep = compare_tilted(dec, 3, 1.0)
    assert rep.sup_weighted < 1e-6
    fit = decay_fit(dec.H, 2, 7)
    assert fit.exponential


def test_near_critical_mass():
    Psi = bump(3, 1, -0.05)
    G, data, res = near_critical_green(K3, Psi, -0.01, 16)
    assert data.sum_D == pytest.approx(-0.01)
    assert res < 1e-10
    assert G.fourier().flat[0] == pytest.approx(data.w / 0.01, rel=1e-8)
    with pytest.raises(ValueError):
        near_critical_green(K3, Psi, 0.0, 16)


def test_symmetrize():
    rng = np.random.default_rng(0)
    f = LatticeFunction(3, 2, rng.random((5, 5, 5)))
    s = symmetrize(f)
    assert s.symmetry_defect() < 1e-15
    assert s.sum() == pytest.approx(f.sum())
    assert np.allclose(symmetrize(s).values, s.values)
