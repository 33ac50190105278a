import numpy as np
import pytest
from hypothesis import given, strategies as st

from lacelab.ctrw import (ExitVolume, Horizon, Unresolved, exit_time, local_time, sample_batch,
                          sample_path)
from lacelab.green_free import free_green_finite
from lacelab.kernel import Volume, nearest_neighbour, validate_kernel


def test_holding_time_mean(nn3):
    b = sample_batch(nn3, np.zeros(3, int), 100_000, seed=11, volume=Volume([[0, 0, 0]]))
    h = b.exit_time
    se = h.std(ddof=1) / np.sqrt(len(h))
    assert abs(h.mean() - 1 / nn3.hatJ) <= 3 * se


def test_jump_law():
    k = validate_kernel(1, {(1,): 1.0, (-1,): 1.0, (2,): 0.25, (-2,): 0.25})
    n = 50_000
    b = sample_batch(k, [0], n, seed=5, horizon=50.0)
    # the second interval of each path holds the position after the first jump
    idx = np.nonzero(np.arange(len(b.path)) - b.path_start() == 1)[0]
    jumps = b.coords[idx, 0]
    assert len(jumps) == n
    for site, rate in zip(k.sites[:, 0], k.rates):
        p = rate / k.hatJ
        c = np.sum(jumps == site)
        assert abs(c - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_fixed_seed_bit_identical(nn3):
    vol = Volume.box(3, 5)
    p1 = sample_path(nn3, [0, 0, 0], ExitVolume(vol), seed=3, index=17)
    p2 = sample_path(nn3, [0, 0, 0], ExitVolume(vol), seed=3, index=17)
    assert p1.to_text() == p2.to_text()
    b = sample_batch(nn3, [0, 0, 0], 20, seed=3, volume=vol)
    assert np.array_equal(b.coords[b.path == 17], p1.sites[:-1])
    other = sample_path(nn3, [0, 0, 0], ExitVolume(vol), seed=4, index=17)
    assert other.to_text() != p1.to_text()


def test_batch_chunks_match(nn3):
    vol = Volume.box(3, 3)
    whole = sample_batch(nn3, [0, 0, 0], 10, seed=1, volume=vol)
    tail = sample_batch(nn3, [0, 0, 0], 5, seed=1, volume=vol, first_index=5)
    assert np.array_equal(whole.exit_time[5:], tail.exit_time)


def test_no_jump_local_time(nn1):
    p = sample_path(nn1, [0], Horizon(1e-4), seed=0)
    assert len(p.jump_times) == 0
    assert local_time(p, 0, 1e-4) == {(0,): 1e-4}


def test_outside_start(nn3):
    vol = Volume.box(3, 3)
    p = sample_path(nn3, [5, 0, 0], ExitVolume(vol), seed=0)
    assert p.exit_time == 0.0
    assert exit_time(p, vol) == 0.0
    assert local_time(p, 0, 0, vol) == {}


def test_mean_exit_time_matches_free_green(nn3):
    vol = Volume.box(3, 3)
    b = sample_batch(nn3, [0, 0, 0], 100_000, seed=2, volume=vol)
    T = b.exit_time
    want = free_green_finite(nn3, vol).matrix[vol.index[(0, 0, 0)]].sum()
    assert abs(T.mean() - want) <= 3 * T.std(ddof=1) / np.sqrt(len(T))


def test_single_site_exit(nn1):
    b = sample_batch(nn1, [0], 100_000, seed=9, volume=Volume([[0]]))
    T = b.exit_time
    assert abs(T.mean() - 0.5) <= 3 * T.std(ddof=1) / np.sqrt(len(T))
    assert free_green_finite(nn1, Volume([[0]])).matrix[0, 0] == pytest.approx(0.5)


def test_unresolved(nn1):
    p = sample_path(nn1, [0], Horizon(1.0), seed=0)
    with pytest.raises(Unresolved):
        p.position(2.0)
    with pytest.raises(Unresolved):
        local_time(p, 0, 2.0)
    with pytest.raises(ValueError):
        sample_batch(nn1, [0], 1, seed=0)


@given(st.integers(0, 10 ** 6), st.floats(0.1, 3.0), st.floats(0.0, 1.0))
def test_local_time_conservation_and_additivity(seed, ell, frac):
    k = nearest_neighbour(2)
    vol = Volume.box(2, 3)
    p = sample_path(k, [0, 0], ExitVolume(vol), seed=seed)
    T = p.exit_time
    t = min(ell, T)
    tau = local_time(p, 0, t, vol)
    assert sum(tau.values()) == pytest.approx(min(ell, T), rel=1e-12, abs=1e-15)
    u = frac * t
    a, b = local_time(p, 0, u, vol), local_time(p, u, t, vol)
    for x in set(a) | set(b) | set(tau):
        assert a.get(x, 0) + b.get(x, 0) == pytest.approx(tau.get(x, 0), rel=1e-12, abs=1e-14)


@given(st.integers(0, 10 ** 6), st.floats(0.01, 5.0))
def test_horizon_paths(seed, ell):
    k = nearest_neighbour(3)
    p = sample_path(k, [0, 0, 0], Horizon(ell), seed=seed)
    tau = local_time(p, 0, ell)
    assert sum(tau.values()) == pytest.approx(ell, rel=1e-12)
    assert np.all(np.diff(p.jump_times) > 0)
    steps = np.abs(np.diff(p.sites, axis=0)).sum(axis=1)
    assert np.all(steps == 1)
