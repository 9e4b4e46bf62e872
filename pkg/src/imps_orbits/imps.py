"""Uniform matrix product states: transfer matrices, fidelity, canonical forms.

Tensors are plain complex arrays of shape ``(chi, d, chi)`` ordered
(left bond, physical, right bond); ``A[:, s, :]`` is the matrix ``A^s``.
:class:`MpsTensor` wraps one for validation and JSON interchange.

Index-merging convention for transfer matrices: ``TM(A, B)`` is the
``(chiA*chiB) x (chiA*chiB)`` matrix ``sum_s kron(conj(A^s), B^s)``, i.e. the row
index is (bra_left, ket_left) and the column index (bra_right, ket_right).
Environment matrices ``X[bra, ket]`` follow the same bra-first order.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

log = logging.getLogger(__name__)

DENSE_LIMIT = 64
DEFAULT_ETA = 1e-15
MAX_CANONICAL_ITER = 500
CANONICAL_RESTARTS = 3


class CanonicalizationStall(RuntimeError):
    """Gauge-fixing iteration failed to converge (non-injective or ill-conditioned input)."""


class DegenerateInput(ValueError):
    """Matrix decomposition requested on (numerically) rank-deficient input."""


class EigensolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MpsTensor:
    """A ``chi_left x d x chi_right`` tensor with JSON round-tripping."""

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=complex)
        if a.ndim != 3:
            raise ValueError(f"MPS tensor must be rank 3, got shape {a.shape}")
        object.__setattr__(self, "data", a)

    @property
    def chi_left(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def chi_right(self) -> int:
        return self.data.shape[2]

    @property
    def chi(self) -> int:
        if self.chi_left != self.chi_right:
            raise ValueError("tensor is not uniform (chi_left != chi_right)")
        return self.chi_left

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(spectral_radius(transfer_matrix(self.data, self.data)) - 1.0) <= tol

    def to_json(self) -> dict:
        return {"chi": self.chi, "d": self.d,
                "re": self.data.real.tolist(), "im": self.data.imag.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "MpsTensor":
        a = np.array(obj["re"], dtype=float) + 1j * np.array(obj["im"], dtype=float)
        t = cls(a)
        if t.chi != obj["chi"] or t.d != obj["d"]:
            raise ValueError("declared chi/d disagree with tensor shape")
        return t


@dataclass
class MixedCanonicalState:
    """Gauge-fixed tuple ``(A_L, A_R, A_C, C)`` with ``A_L C = A_C = C A_R``."""

    AL: np.ndarray
    AR: np.ndarray
    AC: np.ndarray
    C: np.ndarray

    @property
    def chi(self) -> int:
        return self.AL.shape[0]

    @property
    def d(self) -> int:
        return self.AL.shape[1]

    @property
    def singular_values(self) -> np.ndarray:
        return np.abs(np.diag(self.C))

    def residuals(self) -> dict:
        chi = self.chi
        eye = np.eye(chi)
        return {
            "left": np.max(np.abs(np.einsum("asb,asc->bc", self.AL.conj(), self.AL) - eye)),
            "right": np.max(np.abs(np.einsum("asb,csb->ac", self.AR, self.AR.conj()) - eye)),
            "AL_C": np.max(np.abs(np.einsum("asb,bc->asc", self.AL, self.C) - self.AC)),
            "C_AR": np.max(np.abs(np.einsum("ab,bsc->asc", self.C, self.AR) - self.AC)),
        }


def as_array(A) -> np.ndarray:
    if isinstance(A, MpsTensor):
        return A.data
    if isinstance(A, MixedCanonicalState):
        return A.AL
    return np.asarray(A, dtype=complex)


def random_tensor(chi: int, d: int = 2, seed: int = 0) -> np.ndarray:
    """Random ``(chi, d, chi)`` tensor, real and imaginary parts uniform on [-1, 1]."""
    if chi < 1 or d < 2:
        raise ValueError("need chi >= 1 and d >= 2")
    rng = np.random.default_rng(seed)
    n = d * chi * chi
    v = rng.uniform(-1.0, 1.0, size=2 * n)
    return (v[:n] + 1j * v[n:]).reshape(chi, d, chi)


def transfer_matrix(A, B) -> np.ndarray:
    """Mixed transfer matrix ``sum_s kron(conj(A^s), B^s)``."""
    A, B = as_array(A), as_array(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"physical dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    ca, cb = A.shape[0], B.shape[0]
    E = np.einsum("asb,csd->acbd", A.conj(), B)
    return E.reshape(ca * cb, A.shape[2] * B.shape[2])


def _tm_matvec(A, B):
    """Matrix-free right action of TM(A, B) on vectors of length chiA*chiB."""
    ca, cb = A.shape[2], B.shape[2]

    def mv(v):
        X = v.reshape(ca, cb)
        return np.einsum("asb,csd,bd->ac", A.conj(), B, X).ravel()

    return mv


def tm_spectrum(A, B, k: int = 1) -> np.ndarray:
    """Largest-magnitude ``k`` eigenvalues of TM(A, B), sorted by decreasing magnitude."""
    A, B = as_array(A), as_array(B)
    n = A.shape[0] * B.shape[0]
    if n <= DENSE_LIMIT or k >= n - 1:
        ev = np.linalg.eigvals(transfer_matrix(A, B))
    else:
        op = scipy.sparse.linalg.LinearOperator((n, n), matvec=_tm_matvec(A, B), dtype=complex)
        try:
            ev = scipy.sparse.linalg.eigs(op, k=k, which="LM", tol=DEFAULT_ETA,
                                          return_eigenvectors=False)
        except scipy.sparse.linalg.ArpackNoConvergence as err:
            raise EigensolverError("transfer-matrix eigensolver did not converge") from err
    order = np.argsort(-np.abs(ev), kind="stable")
    return ev[order][:k]


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def fidelity_density(A, B) -> float:
    """Per-site fidelity: spectral radius of TM(A, B).

    Both tensors are assumed normalized and injective; the value is gauge
    invariant and lies in [0, 1].
    """
    return float(abs(tm_spectrum(A, B, k=1)[0]))


def normalize(A) -> np.ndarray:
    """Scale ``A`` so that the dominant eigenvalue of TM(A, A) has magnitude one."""
    A = as_array(A)
    return A / np.sqrt(fidelity_density(A, A))


def second_tm_eigenvalue(A) -> float:
    """Magnitude of the subleading TM(A, A) eigenvalue (0 for chi = 1)."""
    A = as_array(A)
    if A.shape[0] == 1:
        return 0.0
    ev = tm_spectrum(A, A, k=2)
    return float(abs(ev[1]) / abs(ev[0]))


def _phase(z: np.ndarray) -> np.ndarray:
    a = np.abs(z)
    return np.where(a > 0, z / np.where(a > 0, a, 1), 1.0)


def gauged_qr(M: np.ndarray, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with a strictly positive diagonal of R (unique for full-rank M)."""
    M = np.asarray(M)
    Q, R = np.linalg.qr(M)
    diag = np.diag(R)
    scale = max(np.max(np.abs(M), initial=0.0), 1.0)
    if diag.size and np.min(np.abs(diag)) <= tol * scale:
        raise DegenerateInput("rank-deficient input to gauged QR")
    ph = _phase(diag)
    return Q * ph[None, :], R * ph.conj()[:, None]


def gauged_rq(M: np.ndarray, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """``M = R Q`` with R upper triangular, positive diagonal, Q with orthonormal rows."""
    M = np.asarray(M)
    R, Q = scipy.linalg.rq(M, mode="economic")
    diag = np.diag(R)
    scale = max(np.max(np.abs(M), initial=0.0), 1.0)
    if diag.size and np.min(np.abs(diag)) <= tol * scale:
        raise DegenerateInput("rank-deficient input to gauged RQ")
    ph = _phase(diag)
    return R * ph.conj()[None, :], Q * ph[:, None]


def gauged_svd(M: np.ndarray, strict: bool = False, degeneracy_tol: float = 1e-12):
    """SVD ``M = U diag(S) V^dagger`` with a fixed phase convention.

    The first component of each left singular vector with magnitude above 1e-12
    is made real positive and the right vector absorbs the phase.  With
    ``strict`` a near-degenerate spectrum (gauge not unique) raises.
    """
    U, S, Vh = np.linalg.svd(np.asarray(M))
    if S.size > 1 and np.min(-np.diff(S)) < degeneracy_tol * max(S[0], 1.0):
        if strict:
            raise DegenerateInput("near-degenerate singular values; SVD gauge not unique")
        log.debug("near-degenerate singular values %s", S)
    V = Vh.conj().T
    for k in range(U.shape[1]):
        col = U[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size:
            ph = col[idx[0]] / abs(col[idx[0]])
            U[:, k] = col * ph.conj()
            V[:, k] = V[:, k] * ph.conj()
    return U, S, V


def _dominant_fixed_point(M: np.ndarray, x0: np.ndarray, tol: float) -> np.ndarray:
    n = M.shape[0]
    if n <= DENSE_LIMIT:
        w, v = np.linalg.eig(M)
        return v[:, np.argmax(np.abs(w))]
    try:
        _, v = scipy.sparse.linalg.eigs(M, k=1, which="LM", v0=x0, tol=max(tol, 1e-15))
    except scipy.sparse.linalg.ArpackNoConvergence as err:
        raise EigensolverError("fixed-point eigensolver did not converge") from err
    return v[:, 0]


def _converged(delta: float, history: list, eta: float) -> bool:
    if delta <= eta:
        return True
    # roundoff floor: tiny and no longer decreasing
    return delta < 1e-12 and len(history) >= 3 and delta >= min(history[-3:-1])


def left_orthonormalize(A, L0=None, eta: float = DEFAULT_ETA,
                        maxiter: int = MAX_CANONICAL_ITER):
    """Find ``A_L = L A L^{-1}`` (up to scale) with ``sum_s A_L^s† A_L^s = 1``.

    Alternates gauged QR of ``L A`` with a fixed-point solve of the map
    ``X -> sum_s A_L^s† X A^s``.  Returns ``(A_L, L)`` with ``||L|| = 1``.
    """
    A = as_array(A)
    chi, d, _ = A.shape
    L = np.eye(chi, dtype=complex) if L0 is None else np.array(L0, dtype=complex)
    L = L / np.linalg.norm(L)
    L_old = L
    Q, L = gauged_qr(np.tensordot(L, A, axes=(1, 0)).reshape(chi * d, chi))
    L = L / np.linalg.norm(L)
    delta = np.linalg.norm(L - L_old)
    history = [delta]
    it = 0
    while not _converged(delta, history, eta):
        it += 1
        if it > maxiter:
            raise CanonicalizationStall(f"left gauge not converged after {maxiter} iterations "
                                        f"(delta={delta:.3e})")
        AL = Q.reshape(chi, d, chi)
        # fixed point of X -> sum_s AL^s† X A^s (row-major vec: kron(P, Q^T))
        M = np.einsum("asb,csd->bdac", AL.conj(), A).reshape(chi * chi, chi * chi)
        L = _dominant_fixed_point(M, L.ravel(), delta / 10).reshape(chi, chi)
        _, L = gauged_qr(L)
        L = L / np.linalg.norm(L)
        L_old = L
        Q, L = gauged_qr(np.tensordot(L, A, axes=(1, 0)).reshape(chi * d, chi))
        L = L / np.linalg.norm(L)
        delta = np.linalg.norm(L - L_old)
        history.append(delta)
    return Q.reshape(chi, d, chi), L


def right_orthonormalize(A, R0=None, eta: float = DEFAULT_ETA,
                         maxiter: int = MAX_CANONICAL_ITER):
    """Mirror of :func:`left_orthonormalize`: ``A R = R A_R`` with A_R right-orthonormal."""
    A = as_array(A)
    chi, d, _ = A.shape
    R = np.eye(chi, dtype=complex) if R0 is None else np.array(R0, dtype=complex)
    R = R / np.linalg.norm(R)
    R_old = R
    R, Q = gauged_rq(np.tensordot(A, R, axes=(2, 0)).reshape(chi, d * chi))
    R = R / np.linalg.norm(R)
    delta = np.linalg.norm(R - R_old)
    history = [delta]
    it = 0
    while not _converged(delta, history, eta):
        it += 1
        if it > maxiter:
            raise CanonicalizationStall(f"right gauge not converged after {maxiter} iterations "
                                        f"(delta={delta:.3e})")
        AR = Q.reshape(chi, d, chi)
        # fixed point of X -> sum_s A^s X AR^s†
        M = np.einsum("asb,csd->acbd", A, AR.conj()).reshape(chi * chi, chi * chi)
        R = _dominant_fixed_point(M, R.ravel(), delta / 10).reshape(chi, chi)
        R, _ = gauged_rq(R)
        R = R / np.linalg.norm(R)
        R_old = R
        R, Q = gauged_rq(np.tensordot(A, R, axes=(2, 0)).reshape(chi, d * chi))
        R = R / np.linalg.norm(R)
        delta = np.linalg.norm(R - R_old)
        history.append(delta)
    return Q.reshape(chi, d, chi), R


def mixed_canonical(A, eta: float = DEFAULT_ETA, L0=None, C0=None,
                    restarts: int = CANONICAL_RESTARTS, seed: int = 0) -> MixedCanonicalState:
    """Mixed gauge ``{A_L, A_R, A_C, C}`` with diagonal, descending, normalized C.

    On a stalled gauge iteration the solve is retried up to ``restarts`` times
    from random initial gauge matrices before :class:`CanonicalizationStall`
    propagates.
    """
    A = as_array(A)
    chi = A.shape[0]
    rng = None
    for attempt in range(restarts + 1):
        try:
            AL, _ = left_orthonormalize(A, L0, eta)
            AR, C = right_orthonormalize(AL, C0, eta)
            break
        except (CanonicalizationStall, DegenerateInput, EigensolverError) as err:
            if attempt == restarts:
                raise CanonicalizationStall(str(err)) from err
            rng = rng or np.random.default_rng(seed)
            L0 = rng.uniform(-1, 1, (chi, chi)) + 1j * rng.uniform(-1, 1, (chi, chi))
            C0 = rng.uniform(-1, 1, (chi, chi)) + 1j * rng.uniform(-1, 1, (chi, chi))
            log.info("canonicalization restart %d: %s", attempt + 1, err)
    C = C / np.linalg.norm(C)
    U, S, V = gauged_svd(C)
    AL = np.einsum("ab,bsc,cd->asd", U.conj().T, AL, U)
    AR = np.einsum("ab,bsc,cd->asd", V.conj().T, AR, V)
    Cd = np.diag(S).astype(complex)
    AC = AL * S[None, None, :]
    if chi > 1 and S[-1] < 1e-12 * S[0]:
        log.warning("entanglement spectrum ill-conditioned: min/max singular value %.2e",
                    S[-1] / S[0])
    return MixedCanonicalState(AL, AR, AC, Cd)


def entanglement_entropy(state, tol: float = 1e-10) -> float:
    """Von Neumann entropy ``-sum p ln p`` of the Schmidt spectrum ``p = s**2``."""
    s = state.singular_values if isinstance(state, MixedCanonicalState) else np.abs(
        np.diag(state) if np.ndim(state) == 2 else np.asarray(state))
    p = s**2
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"Schmidt spectrum not normalized (sum p = {p.sum():.12f})")
    p = p[p > 0]
    return max(0.0, float(-np.sum(p * np.log(p))))


def expectation(state: MixedCanonicalState, op: np.ndarray) -> complex:
    """Expectation value per site of a one- or two-site operator."""
    op = np.asarray(op, dtype=complex)
    d = state.d
    AC = state.AC
    if op.shape == (d, d):
        return complex(np.einsum("asb,st,atb->", AC.conj(), op, AC))
    if op.shape == (d * d, d * d):
        theta = np.einsum("asb,btc->astc", state.AL, AC)
        o4 = op.reshape(d, d, d, d)
        return complex(np.einsum("astc,stuv,auvc->", theta.conj(), o4, theta))
    raise ValueError(f"operator shape {op.shape} matches neither one nor two sites (d={d})")


def spatial_inversion(A) -> np.ndarray:
    """Reflect the chain by transposing the bond indices of every ``A^s``."""
    return as_array(A).transpose(2, 1, 0).copy()


def gauge_transform(A, X: np.ndarray) -> np.ndarray:
    """``X^{-1} A^s X`` for every physical index."""
    A = as_array(A)
    return np.einsum("ab,bsc,cd->asd", np.linalg.inv(X), A, X)
