import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lacelab.green_free import d_tilted, free_green_infinite, tilted_green
from lacelab.lattice_field import (DimensionMismatch, LatticeFunction, ParameterRegimeUnsupported,
                                   SingularSymbol, TAIL_FRACTION, TorusFunction, box_norm2,
                                   bracket, certify_conv_e, certify_hhs1, certify_hhs2, convolve,
                                   hhs2_exponent, orbit_reps, stencil_residual, tail_sum_bound,
                                   torus_convolve, torus_deconvolve)
from oracles import CONV_E_HEAD_D5_R8, POWER_SUM_D5


def test_convolve_with_delta():
    rng = np.random.default_rng(1)
    f = LatticeFunction(2, 3, rng.normal(size=(7, 7)))
    out = convolve(f, LatticeFunction.delta(2, 3))
    assert np.allclose(out.values, f.values)


def test_triangle():
    box = LatticeFunction(1, 2, np.array([0, 1, 1, 1, 0.0]))
    out = convolve(box, box)
    assert out.values.tolist() == [1, 2, 3, 2, 1]


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        convolve(LatticeFunction.delta(1), LatticeFunction.delta(2))


def test_jump_kernel_inverts_free_green(nn5):
    S = free_green_infinite(nn5, 4).S
    J = nn5.jplus_array(1)
    J[(1,) * 5] = -nn5.hatJ
    out = convolve(LatticeFunction(5, 1, J), S)
    out.values[(1,) * 5] += 1.0
    assert np.max(np.abs(out.values)) < 20 * S.err + 1e-12


def test_orbit_reps_cover_box():
    for d, r in [(2, 3), (3, 2), (5, 1)]:
        reps, mult = orbit_reps(d, r)
        assert mult.sum() == (2 * r + 1) ** d


def test_tail_sum_bound_dominates():
    # sum_{|x| > 10} |x|^{-7} in d=3 against a direct partial sum out to 60
    n2 = box_norm2(3, 60).astype(float)
    far = n2 > 100
    partial = float(np.sum(n2[far] ** -3.5))
    assert partial <= tail_sum_bound(3, 7, 10)


def test_hhs1_origin_matches_oracle():
    c = certify_hhs1(5, scan_radius=1)
    head20, head40 = POWER_SUM_D5[(12, 20)], POWER_SUM_D5[(12, 40)]
    assert head40 <= c.at_origin
    assert c.at_origin <= head20 * (1 + TAIL_FRACTION)
    assert c.C >= c.at_origin
    assert c.ok


def test_hhs1_requires_d5():
    with pytest.raises(ParameterRegimeUnsupported):
        certify_hhs1(4)


def test_hhs1_wide_scan():
    # shifts up to |v| = 14 need the larger head box for a tight tail
    c = certify_hhs1(5, scan_radius=10, radius=40)
    assert math.isfinite(c.C) and c.max_tail_fraction < TAIL_FRACTION


def test_hhs2_exponents():
    assert hhs2_exponent(6, 3, 5) == 3
    assert hhs2_exponent(4, 3, 5) == 2
    with pytest.raises(ParameterRegimeUnsupported):
        hhs2_exponent(5, 3, 5)
    with pytest.raises(ParameterRegimeUnsupported):
        hhs2_exponent(3, 1, 5)


@pytest.mark.parametrize("a,b", [(6, 3), (4, 3)])
def test_hhs2_origin_is_full_sum(a, b):
    c = certify_hhs2(a, b, 5, scan_radius=1)
    head40 = POWER_SUM_D5[(a + b, 40)]
    assert head40 <= c.at_origin <= head40 * (1 + TAIL_FRACTION)
    assert c.C >= c.at_origin


def test_conv_e_origin_head():
    c = certify_conv_e(5, scan_radius=0, radius=8)
    frac = [p[3] for p in c.points if p[0] == (0, 0) and p[1] == (0, 0)][0]
    head = c.at_origin / (1 + frac)
    assert head == pytest.approx(CONV_E_HEAD_D5_R8, rel=1e-10)
    assert c.C >= c.at_origin
    assert math.isfinite(c.C)


def test_torus_negative_delta():
    D = TorusFunction.from_lattice(LatticeFunction.delta(3, 0, -1.0), 8)
    H, res = torus_deconvolve(D)
    assert res < 1e-14
    assert np.allclose(H.to_lattice(2).values, LatticeFunction.delta(3, 2).pad(2).values)


def test_torus_tilted(nn5):
    z = 0.5 / nn5.hatJ
    D = TorusFunction.from_lattice(d_tilted(nn5, z), 16)
    H, res = torus_deconvolve(D)
    assert res < 1e-10
    S = tilted_green(nn5, z, 2)
    assert np.allclose(H.to_lattice(2).values, S.values, atol=1e-10)
    sites = np.array([[0] * 5, [1, 0, 0, 0, 0], [2, 1, 0, 0, 0]])
    assert np.max(np.abs(stencil_residual(d_tilted(nn5, z), H, sites))) < 1e-10


def test_singular_symbol(nn5):
    D = TorusFunction.from_lattice(d_tilted(nn5, 1 / nn5.hatJ), 8)
    with pytest.raises(SingularSymbol):
        torus_deconvolve(D)


def test_csv_roundtrip(tmp_path):
    f = LatticeFunction(2, 1, np.arange(9.0).reshape(3, 3) / 7)
    f.to_csv(tmp_path / "f.csv")
    g = LatticeFunction.from_csv(tmp_path / "f.csv")
    assert np.array_equal(f.values, g.values)


def test_decay_metadata():
    f = LatticeFunction.from_norm(3, 4, lambda n2: bracket(n2) ** -5.0, decay=(1.0, 5))
    assert f.decay_holds()
    assert f.scale(2.0).check_decay() == pytest.approx(2.0)


@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 2), st.integers(0, 10 ** 6))
def test_convolution_commutes(d, r1, r2, seed):
    rng = np.random.default_rng(seed)
    f = LatticeFunction(d, r1, rng.normal(size=(2 * r1 + 1,) * d))
    g = LatticeFunction(d, r2, rng.normal(size=(2 * r2 + 1,) * d))
    assert np.allclose(convolve(f, g).values, convolve(g, f).values, atol=1e-12)


@given(st.integers(1, 3), st.sampled_from([4, 6, 8]), st.booleans(), st.integers(0, 10 ** 6))
def test_torus_roundtrip_and_convolution(d, L, even, seed):
    rng = np.random.default_rng(seed)
    r = 1
    v = rng.normal(size=(2 * r + 1,) * d)
    if even:
        for ax in range(d):
            v = v + np.flip(v, ax)
    f = TorusFunction.from_lattice(LatticeFunction(d, r, v), L, even)
    assert f.roundtrip_error() < 1e-12
    delta = TorusFunction.from_lattice(LatticeFunction.delta(d), L, even)
    assert np.allclose(torus_convolve(f, delta).values, f.values, atol=1e-12)
