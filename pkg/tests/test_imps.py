import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imps_orbits import ed
from imps_orbits.imps import (DegenerateInput, MpsTensor, entanglement_entropy, expectation,
                              fidelity_density, gauge_transform, gauged_qr, gauged_svd,
                              left_orthonormalize, mixed_canonical, normalize, random_tensor,
                              right_orthonormalize, second_tm_eigenvalue, spatial_inversion,
                              transfer_matrix)
from imps_orbits.model import X, Y, Z

seeds = st.integers(0, 2**31 - 1)
chis = st.integers(1, 6)


def product(v):
    v = np.asarray(v, dtype=complex)
    return (v / np.linalg.norm(v)).reshape(1, 2, 1)


UP, DOWN = product([1, 0]), product([0, 1])


# ---------------------------------------------------------------- tensors

def test_random_tensor_deterministic_and_bounded():
    a, b = random_tensor(2, 2, seed=5), random_tensor(2, 2, seed=5)
    assert np.array_equal(a, b) and a.shape == (2, 2, 2)
    assert np.all(np.abs(a.real) <= 1) and np.all(np.abs(a.imag) <= 1)
    assert random_tensor(1, 2, 0).size == 2


def test_random_tensor_mean():
    # uniform on [-1, 1]: standard deviation 2/sqrt(12) per draw
    vals = np.concatenate([random_tensor(1, 2, s).ravel() for s in range(50000)])
    sigma = (2 / np.sqrt(12)) / np.sqrt(vals.size)
    assert abs(vals.real.mean()) < 3 * sigma and abs(vals.imag.mean()) < 3 * sigma


def test_mps_tensor_json_roundtrip():
    t = MpsTensor(random_tensor(3, 2, 1))
    back = MpsTensor.from_json(json.loads(json.dumps(t.to_json())))
    assert np.array_equal(back.data, t.data)
    with pytest.raises(ValueError):
        MpsTensor.from_json({**t.to_json(), "chi": 2})


# ---------------------------------------------------------------- transfer matrices

def test_transfer_matrix_product_states():
    a, b = product([1, 2j]), product([3, -1])
    tm = transfer_matrix(a, b)
    assert tm.shape == (1, 1)
    assert np.isclose(tm[0, 0], np.vdot(a.ravel(), b.ravel()))


def test_transfer_matrix_matches_loop(rng):
    A, B = random_tensor(2, 2, 3), random_tensor(3, 2, 4)
    ref = sum(np.kron(A[:, s, :].conj(), B[:, s, :]) for s in range(2))
    assert np.allclose(transfer_matrix(A, B), ref, atol=1e-14)


def test_transfer_matrix_dimension_mismatch():
    with pytest.raises(ValueError):
        transfer_matrix(random_tensor(2, 2), random_tensor(2, 3))


def test_fidelity_reference_values():
    assert fidelity_density(UP, UP) == pytest.approx(1.0, abs=1e-12)
    assert fidelity_density(UP, DOWN) == pytest.approx(0.0, abs=1e-15)
    tilted = product([np.cos(np.pi / 8), np.sin(np.pi / 8)])
    assert fidelity_density(UP, tilted) == pytest.approx(0.9238795325112867, abs=1e-14)


@given(seeds, st.integers(1, 4))
def test_normalized_state_has_unit_radius(seed, chi):
    A = normalize(random_tensor(chi, 2, seed))
    assert MpsTensor(A).is_normalized()
    assert fidelity_density(A, A) == pytest.approx(1.0, abs=1e-12)


@given(seeds, seeds)
def test_fidelity_symmetric(s1, s2):
    A, B = normalize(random_tensor(2, 2, s1)), normalize(random_tensor(3, 2, s2))
    f = fidelity_density(A, B)
    assert abs(f - fidelity_density(B, A)) <= 1e-12
    assert 0 <= f <= 1 + 1e-10


@given(seeds)
def test_fidelity_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    A = normalize(random_tensor(3, 2, seed))
    G = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) + 3 * np.eye(3)
    B = normalize(gauge_transform(A, G))
    assert fidelity_density(A, B) == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------- gauged factorizations

def test_gauged_qr_diagonal_cases():
    Q, R = gauged_qr(np.diag([2.0, -3.0]))
    assert np.allclose(Q, np.diag([1, -1])) and np.allclose(R, np.diag([2, 3]))
    Q, R = gauged_qr(np.eye(3))
    assert np.allclose(Q, np.eye(3)) and np.allclose(R, np.eye(3))


def test_gauged_qr_random(rng):
    M = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    Q, R = gauged_qr(M)
    assert np.linalg.norm(M - Q @ R) <= 1e-13
    assert np.allclose(Q.conj().T @ Q, np.eye(2), atol=1e-14)
    assert np.allclose(np.tril(R, -1), 0) and np.min(np.diag(R).real) > 0
    assert np.allclose(np.diag(R).imag, 0, atol=1e-15)


def test_gauged_qr_rank_deficient():
    with pytest.raises(DegenerateInput):
        gauged_qr(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))


def test_gauged_svd_cases(rng):
    U, S, V = gauged_svd(np.diag([3.0, 1.0]))
    assert np.allclose(U, np.eye(2)) and np.allclose(V, np.eye(2)) and np.allclose(S, [3, 1])
    U, S, V = gauged_svd(np.array([[-2.0]]))
    assert np.allclose(U, [[1]]) and np.allclose(S, [2]) and np.allclose(V, [[-1]])
    M = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    U, S, V = gauged_svd(M)
    assert np.linalg.norm(M - U @ np.diag(S) @ V.conj().T) <= 1e-13
    for k in range(3):
        first = U[np.flatnonzero(np.abs(U[:, k]) > 1e-12)[0], k]
        assert first.real > 0 and abs(first.imag) <= 1e-15


def test_gauged_svd_strict_degenerate():
    with pytest.raises(DegenerateInput):
        gauged_svd(np.eye(2), strict=True)


# ---------------------------------------------------------------- canonical forms

def test_left_orthonormalize_fixed_point():
    st = mixed_canonical(random_tensor(3, 2, 2))
    AL, L = left_orthonormalize(st.AL, np.eye(3))
    assert np.allclose(AL, st.AL, atol=1e-12)
    assert np.allclose(L, np.eye(3) / np.sqrt(3), atol=1e-12)


def test_left_orthonormalize_chi1():
    a, b = 0.3 - 0.2j, 1.1 + 0.5j
    AL, L = left_orthonormalize(np.array([a, b]).reshape(1, 2, 1))
    assert np.allclose(AL.ravel(), np.array([a, b]) / np.hypot(abs(a), abs(b)))
    assert np.allclose(L, [[1.0]])


def test_left_orthonormalize_random_chi3(tensor3):
    AL, L = left_orthonormalize(tensor3)
    assert np.max(np.abs(np.einsum("asb,asc->bc", AL.conj(), AL) - np.eye(3))) <= 1e-12
    # L A = A_L L up to the scale of A
    LA = np.einsum("ab,bsc->asc", L, tensor3)
    ALL = np.einsum("asb,bc->asc", AL, L)
    assert np.max(np.abs(LA - ALL)) <= 1e-12
    assert fidelity_density(tensor3, AL) == pytest.approx(1.0, abs=1e-10)


def test_right_orthonormalize_random(tensor3):
    AR, R = right_orthonormalize(tensor3)
    assert np.max(np.abs(np.einsum("asb,csb->ac", AR, AR.conj()) - np.eye(3))) <= 1e-12


@pytest.mark.parametrize("chi", range(1, 7))
def test_canonical_residuals_bulk(chi):
    # 1000 random tensors spread over chi = 1..6 in the acceptance suite; a sample here
    for seed in range(20):
        st = mixed_canonical(random_tensor(chi, 2, 1000 * chi + seed))
        assert max(st.residuals().values()) <= 1e-12


def test_mixed_canonical_chi1():
    st = mixed_canonical(product([0.6, 0.8j]))
    assert np.allclose(st.C, [[1.0]])
    assert np.allclose(st.AL, st.AR) and np.allclose(st.AL, st.AC)


def test_mixed_canonical_schmidt_spectrum():
    st = mixed_canonical(random_tensor(2, 2, 9))
    s = st.singular_values
    assert np.all(np.diff(s) <= 0) and np.sum(s**2) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(st.C, np.diag(s))


def test_mixed_canonical_idempotent(state2):
    again = mixed_canonical(state2.AL)
    assert max(again.residuals().values()) <= 1e-12
    assert np.allclose(again.singular_values, state2.singular_values, atol=1e-12)
    # equal up to a diagonal phase gauge
    overlap = np.einsum("asb,asb->b", again.AL.conj(), state2.AL)
    assert fidelity_density(again.AL, state2.AL) == pytest.approx(1.0, abs=1e-12)
    assert overlap.shape == (2,)


def test_second_eigenvalue_filters_redundant_embedding():
    assert second_tm_eigenvalue(UP) == 0.0
    a = np.array([0.6, 0.8j])
    A = np.zeros((2, 2, 2), dtype=complex)
    A[0, :, 0] = a
    A[1, :, 1] = a
    assert second_tm_eigenvalue(A) > 1 - 1e-6
    assert second_tm_eigenvalue(normalize(random_tensor(2, 2, 3))) < 1


# ---------------------------------------------------------------- observables

def test_entropy_reference_values():
    assert entanglement_entropy(np.array([1.0, 0.0])) == 0.0
    assert entanglement_entropy(np.full(2, 1 / np.sqrt(2))) == pytest.approx(np.log(2))
    assert entanglement_entropy(np.sqrt([0.9, 0.1])) == pytest.approx(0.325082973391448, abs=1e-12)
    with pytest.raises(ValueError):
        entanglement_entropy(np.array([1.0, 1.0]))


@given(seeds, st.integers(1, 4))
def test_entropy_bound(seed, chi):
    S = entanglement_entropy(mixed_canonical(random_tensor(chi, 2, seed)))
    assert 0 <= S <= np.log(chi) + 1e-12


def test_expectation_product_state():
    st = mixed_canonical(UP)
    assert expectation(st, Z) == pytest.approx(1.0)
    assert expectation(st, X) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        expectation(st, np.eye(3))


@given(seeds)
def test_hermitian_expectations_real(seed):
    st = mixed_canonical(random_tensor(3, 2, seed))
    for op in (X, Y, Z, np.kron(Z, X)):
        assert abs(expectation(st, op).imag) <= 1e-12


def _short_range_tensor(chi):
    """Rank-one tensor plus a small random part: fast-decaying correlations."""
    rng = np.random.default_rng(chi)
    u = rng.normal(size=(2, chi)) + 1j * rng.normal(size=(2, chi))
    v = rng.normal(size=chi)
    return normalize(np.einsum("sa,b->asb", u, v) + 0.2 * random_tensor(chi, 2, 5))


@pytest.mark.parametrize("chi,L", [(2, 10), (3, 10)])
def test_ring_oracle_agreement(chi, L):
    A = _short_range_tensor(chi)
    assert second_tm_eigenvalue(A) < 0.2
    st = mixed_canonical(A)
    v = ed.mps_to_statevector(st.AL, L)
    t = v.reshape(2, 2, -1)
    for op in (X, Y, Z):
        ring = np.einsum("abk,ac,cbk->", t.conj(), op, t)
        assert abs(ring - expectation(st, op)) <= 1e-6
    zx = np.einsum("abk,ac,bd,cdk->", t.conj(), Z, X, t)
    assert abs(zx - expectation(st, np.kron(Z, X))) <= 1e-6


def test_inversion_is_involution_and_mirrors_correlators():
    A = random_tensor(3, 2, 5)
    assert np.array_equal(spatial_inversion(spatial_inversion(A)), A)
    st, inv = mixed_canonical(A), mixed_canonical(spatial_inversion(A))
    zx = expectation(inv, np.kron(Z, X))
    xz = expectation(st, np.kron(X, Z))
    assert abs(zx - xz) <= 1e-8
