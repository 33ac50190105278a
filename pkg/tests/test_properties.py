"""Cross-module invariants, mostly as hypothesis properties."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lacelab.ctrw import Horizon, local_time, sample_path
from lacelab.dyson import assemble_dyson, decay_fit, deconvolve
from lacelab.green_free import free_green_infinite, resolvent
from lacelab.interaction import Edwards, Phi4
from lacelab.kernel import Volume, generator_matrix, nearest_neighbour, signed_permutations, \
    validate_kernel
from lacelab.lattice_field import LatticeFunction, convolve
from lacelab.montecarlo import estimate_green

K1 = nearest_neighbour(1)
K2 = nearest_neighbour(2)


@st.composite
def kernels(draw):
    d = draw(st.integers(1, 3))
    reps = [(1,) + (0,) * (d - 1)]
    if draw(st.booleans()):
        reps.append((2,) + (0,) * (d - 1))
    if d > 1 and draw(st.booleans()):
        reps.append((1, 1) + (0,) * (d - 2))
    rates = {}
    for r in reps:
        c = draw(st.floats(0.1, 3.0))
        for T in signed_permutations(d):
            rates[tuple(int(v) for v in T @ np.array(r))] = c
    return validate_kernel(d, rates)


@st.composite
def volumes(draw, d):
    side = draw(st.integers(1, 4))
    box = Volume.box(d, side)
    keep = draw(st.lists(st.booleans(), min_size=len(box), max_size=len(box)))
    keep[0] = True
    return Volume(box.sites[np.array(keep)])


@given(kernels())
def test_kernel_mass_balance(k):
    # J(0) = -hatJ, so the full kernel sums to zero
    assert float(np.sum(k.rates)) - k.hatJ == 0.0


@given(kernels(), st.data())
def test_generator_prefix_and_positivity(k, data):
    vol = data.draw(volumes(k.d))
    A = generator_matrix(k, vol)
    j = data.draw(st.integers(1, len(vol)))
    sub = Volume(vol.sites[:j])
    assert np.array_equal(generator_matrix(k, sub), A[:j, :j])
    np.linalg.cholesky(-A)


@given(st.integers(1, 3), st.data(), st.floats(0.0, 1.0))
def test_resolvent_monotone_in_volume(d, data, nu):
    k = nearest_neighbour(d)
    vol = data.draw(volumes(d))
    j = data.draw(st.integers(1, len(vol)))
    sub = Volume(vol.sites[:j])
    big = resolvent(k, vol, nu)[:j, :j]
    small = resolvent(k, sub, nu)
    assert np.all(small <= big * (1 + 1e-12) + 1e-15)


def test_infinite_green_symmetric():
    S = free_green_infinite(nearest_neighbour(3), 4).S
    for T in signed_permutations(3):
        sites = np.argwhere(np.ones((9,) * 3, dtype=bool)) - 4
        assert np.allclose(S.at(sites @ T.T), S.at(sites), rtol=1e-10)


@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 10 ** 6))
def test_convolution_bilinear(d, r1, r2, seed):
    rng = np.random.default_rng(seed)
    f = LatticeFunction(d, r1, rng.random((2 * r1 + 1,) * d))
    g = LatticeFunction(d, r2, rng.random((2 * r2 + 1,) * d))
    h = LatticeFunction(d, r2, rng.random((2 * r2 + 1,) * d))
    a, b = rng.random(2)
    lhs = convolve(f, g.scale(a) + h.scale(b)).values
    rhs = a * convolve(f, g).values + b * convolve(f, h).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 10 ** 6), st.floats(0.1, 3.0))
def test_local_time_difference_quotient(seed, ell):
    p = sample_path(K2, [0, 0], Horizon(ell + 1.0), seed=seed)
    t = ell
    nxt = p.jump_times[p.jump_times > t]
    gap = (nxt[0] if len(nxt) else p.resolved) - t
    h = min(gap, 1.0) / 4
    x = tuple(int(v) for v in p.position(t))
    a, b = local_time(p, 0, t), local_time(p, 0, t + h)
    for y in set(a) | set(b):
        q = (b.get(y, 0.0) - a.get(y, 0.0)) / h
        assert q == pytest.approx(1.0 if y == x else 0.0, abs=1e-9)


@settings(max_examples=20)
@given(st.lists(st.floats(0, 3), min_size=4, max_size=4), st.floats(0, 1), st.floats(0, 1))
def test_edwards_ratio_at_most_one(v, g, nu):
    m = Edwards(g, nu)
    pair = Volume([[0], [1]])
    assert m.ratio_weight(pair, np.array(v[:2]), np.array(v[2:])) <= 1.0


LINE = Volume(np.arange(-2, 3)[:, None])


def test_green_monotone_in_nu_and_volume():
    hi = estimate_green(Edwards(0.1, 0.4), K1, LINE, (0,), 3000, seed=1)
    lo = estimate_green(Edwards(0.1, 0.1), K1, LINE, (0,), 3000, seed=1)
    # common random numbers make the nu ordering exact path by path
    assert np.all(hi.mean <= lo.mean + 1e-15)
    small = Volume(np.arange(-1, 2)[:, None])
    gs = estimate_green(Edwards(0.1, 0.1), K1, small, (0,), 3000, seed=2)
    for i, b in enumerate(small.sites):
        j = LINE.index[tuple(b)]
        assert gs.mean[i] <= lo.mean[j] + 3 * np.hypot(gs.stderr[i], lo.stderr[j])


DYNKIN_VOLUMES = [Volume([[0], [1]]), Volume([[0], [1], [2]])]


@pytest.mark.parametrize("vol", DYNKIN_VOLUMES, ids=["two", "three"])
@pytest.mark.parametrize("g,nu,n", list(itertools.product([0.0, 0.05, 0.1], [0.0, 0.25], [1, 2])))
def test_walk_equals_spin(vol, g, nu, n):
    if g == 0:
        exact = resolvent(K1, vol, nu)[0]
    else:
        exact = Phi4(g, nu, n, K1).two_point(vol)[0]
    est = estimate_green(Phi4(g, nu, n, K1), K1, vol, (0,), 3000, seed=13)
    assert np.all(np.abs(est.mean - exact) <= 3.5 * est.stderr + 1e-12)


def test_criticality_signature():
    k = nearest_neighbour(3)
    fits, sums = [], []
    for sd in (-0.05, -0.002):
        # w hatJ = 1 + sum D for the free walk
        data = assemble_dyson(k, k.hatJ - k.hatJ / (1 + sd))
        dec = deconvolve(data, 48)
        sums.append(dec.H.fourier().flat[0])
        fits.append(decay_fit(dec.H, 3, 10))
    assert fits[0].exponential
    assert sums[1] > 10 * sums[0]
    assert abs(fits[1].exponent - 1) < abs(fits[0].exponent - 1)
