import numpy as np
import pytest
from hypothesis import given, strategies as st

from lacelab.kernel import (EmptySupport, KernelError, NegativeRate, NotGenerating, NotSymmetric,
                            Volume, generator_matrix, kernel_to_text, lattice_index, load_kernel,
                            nearest_neighbour, parse_kernel_text, range2, signed_permutations,
                            symmetry_orbit, validate_kernel)
from oracles import ORBIT_110


def test_nn_d5_valid(nn5):
    assert nn5.hatJ == 10
    assert nn5.J0 == -10
    assert len(nn5.sites) == 10
    assert nn5((1, 0, 0, 0, 0)) == 1.0
    assert nn5((1, 1, 0, 0, 0)) == 0.0


def test_negative_rate():
    with pytest.raises(NegativeRate):
        validate_kernel(2, {(1, 0): -1, (-1, 0): -1, (0, 1): 1, (0, -1): 1})


def test_even_sublattice_not_generating():
    with pytest.raises(NotGenerating):
        validate_kernel(2, {(2, 0): 1, (-2, 0): 1, (0, 2): 1, (0, -2): 1})


def test_asymmetric_and_empty():
    with pytest.raises(NotSymmetric):
        validate_kernel(1, {(1,): 1.0, (-1,): 2.0})
    with pytest.raises(EmptySupport):
        validate_kernel(1, {(1,): 0.0})
    with pytest.raises(KernelError):
        validate_kernel(2, {(1,): 1.0})


def test_generator_single_site(nn1):
    assert generator_matrix(nn1, Volume([[0]])).tolist() == [[-2.0]]


def test_generator_two_sites(nn1, two_site):
    assert generator_matrix(nn1, two_site).tolist() == [[-2.0, 1.0], [1.0, -2.0]]


def test_orbits():
    assert symmetry_orbit(2, (1, 0)) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    assert len(symmetry_orbit(3, (1, 1, 0))) == ORBIT_110
    for d in (1, 3, 5):
        assert symmetry_orbit(d, (0,) * d) == {(0,) * d}
    assert len(signed_permutations(3)) == 48


def test_lattice_index():
    assert lattice_index(np.array([[1, 0], [0, 1]])) == 1
    assert lattice_index(np.array([[2, 0], [0, 2]])) == 4
    assert lattice_index(np.array([[1, 1], [1, -1]])) == 2


def test_range2_and_symbol():
    k = range2(2)
    assert k.hatJ == 24
    ks = np.array([[0.0, 0.0], [0.3, -1.1], [np.pi, 0.5]])
    direct = np.array([sum(r * np.cos(kk @ s) for s, r in zip(k.sites, k.rates)) for kk in ks])
    assert np.allclose(k.symbol(ks), direct, atol=1e-12)


def test_kernel_text_roundtrip(tmp_path):
    k = range2(2)
    p = tmp_path / "k.txt"
    p.write_text(kernel_to_text(k))
    back = load_kernel(str(p))
    assert np.array_equal(back.sites, k.sites) and np.array_equal(back.rates, k.rates)
    with pytest.raises(FileNotFoundError):
        load_kernel(str(tmp_path / "missing.txt"))
    with pytest.raises(KernelError):
        parse_kernel_text("1 0 1.0\n")


def test_volume_lookup():
    vol = Volume.box(2, 3)
    assert len(vol) == 9
    idx = vol.lookup(np.array([[0, 0], [2, 0], [-1, 1]]))
    assert idx[1] == -1 and idx[0] >= 0 and idx[2] >= 0
    with pytest.raises(ValueError):
        Volume([[0, 0], [0, 0]])


@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2 ** 16))
def test_generator_symmetric_rows_nonpositive(d, side, seed):
    rng = np.random.default_rng(seed)
    k = nearest_neighbour(d, rate=float(rng.uniform(0.1, 3)))
    vol = Volume.box(d, side)
    keep = rng.random(len(vol)) < 0.7
    keep[0] = True
    sub = Volume(vol.sites[keep])
    A = generator_matrix(k, sub)
    assert np.array_equal(A, A.T)
    assert np.all(A.sum(axis=1) <= 1e-12)
    assert np.all(np.diag(A) == -k.hatJ)
