import numpy as np
import pytest
from hypothesis import given, strategies as st

from imps_orbits.imps import fidelity_density, mixed_canonical, normalize, random_tensor
from imps_orbits.tangent import (fidelity_with_gradient, fit_coordinates, null_space,
                                 tangent_basis)

seeds = st.integers(0, 2**31 - 1)


def left_canonical(chi, seed):
    return mixed_canonical(random_tensor(chi, 2, seed)).AL


def test_null_space_spin_up():
    nu = null_space(np.array([1.0, 0.0]).reshape(1, 2, 1))
    assert nu.shape == (2, 1)
    assert abs(abs(nu[1, 0]) - 1) <= 1e-14 and abs(nu[0, 0]) <= 1e-14


@pytest.mark.parametrize("chi", [2, 4])
def test_null_space_shape_and_residuals(chi):
    AL = left_canonical(chi, 3)
    nu = null_space(AL)
    assert nu.shape == (2 * chi, chi)
    assert np.max(np.abs(nu.conj().T @ nu - np.eye(chi))) <= 1e-13
    assert np.max(np.abs(nu.conj().T @ AL.reshape(2 * chi, chi))) <= 1e-13


def test_null_space_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        null_space(random_tensor(2, 2, 0))


@pytest.mark.parametrize("chi,count", [(1, 2), (2, 8), (3, 18)])
def test_basis_size(chi, count):
    b = tangent_basis(left_canonical(chi, 1))
    assert b.dim == count
    assert len(b.vectors_re) + len(b.vectors_im) == count


@given(seeds, st.integers(1, 3))
def test_basis_invariants(seed, chi):
    b = tangent_basis(left_canonical(chi, seed))
    re, im = b.vectors_re, b.vectors_im
    for v in re + im:
        assert b.gauge_residual(v) <= 1e-12
    for a, c in zip(re, im):
        assert np.array_equal(1j * a, c)
    # Euclidean overlap of the real directions, Re<V_i, V_j>, is the identity
    flat = np.array([b.direction(i).ravel() for i in range(b.dim)])
    gram = (flat.conj() @ flat.T).real
    assert np.max(np.abs(gram - np.eye(b.dim))) <= 1e-12


@given(seeds)
def test_coefficient_roundtrip(seed):
    b = tangent_basis(left_canonical(3, seed))
    x = np.random.default_rng(seed).normal(size=b.dim)
    B = b.tensor(x)
    assert b.gauge_residual(B) <= 1e-12
    assert np.max(np.abs(b.coefficients(B) - x)) <= 1e-12


def test_basis_ordering_deterministic():
    AL = left_canonical(2, 8)
    b1, b2 = tangent_basis(AL), tangent_basis(AL.copy())
    for i in range(b1.dim):
        assert np.array_equal(b1.direction(i), b2.direction(i))
    # row-major over X entries, re block first
    assert np.array_equal(b1.direction(1), b1.from_complex(np.eye(b1.n_complex)[1]))
    assert np.array_equal(b1.direction(b1.n_complex), 1j * b1.direction(0))


def test_tangent_directions_are_physical():
    AL = left_canonical(2, 4)
    b = tangent_basis(AL)
    for i in range(b.dim):
        f = fidelity_density(AL, normalize(AL + 1e-3 * b.direction(i)))
        assert f < 1
        assert 1 - f < 1e-5


def test_fidelity_gradient_matches_finite_differences():
    AL = left_canonical(2, 6)
    b = tangent_basis(AL)
    target = normalize(AL + 0.05 * b.tensor(np.random.default_rng(0).normal(size=b.dim)))
    beta = np.random.default_rng(1).normal(scale=0.02, size=b.dim)
    D, g = fidelity_with_gradient(target, b, beta)
    assert D == pytest.approx(fidelity_density(target, normalize(AL + b.tensor(beta))), abs=1e-12)
    h = 1e-6
    fd = np.array([(fidelity_with_gradient(target, b, beta + h * e)[0]
                    - fidelity_with_gradient(target, b, beta - h * e)[0]) / (2 * h)
                   for e in np.eye(b.dim)])
    assert np.max(np.abs(fd - g)) <= 1e-7


@pytest.mark.parametrize("chi", [1, 2, 3])
def test_fit_recovers_known_coordinates(chi):
    AL = left_canonical(chi, 10 + chi)
    b = tangent_basis(AL)
    x = np.random.default_rng(chi).normal(scale=1e-2, size=b.dim)
    target = normalize(AL + b.tensor(x))
    beta, resid = fit_coordinates(target, b)
    assert resid <= 1e-12
    # a normalized displacement is reached up to the norm change along A_L itself
    assert np.max(np.abs(beta - x)) <= 1e-6
