"""Gauge-fixed tangent basis of the uniform-MPS manifold at a left-orthonormal point.

Every tangent tensor is written ``V = nu X`` where ``nu`` spans the orthogonal
complement of the merged ``(chi*d) x chi`` matrix of ``A_L``.  Such tensors obey
``sum_s A_L^s† V^s = 0`` and are therefore never pure gauge directions.  The
real parametrisation uses ``2 (d-1) chi**2`` coordinates: one real and one
imaginary direction per entry of the ``(d-1)chi x chi`` matrix ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .imps import as_array, fidelity_density, normalize

ORTHONORMAL_TOL = 1e-10


def _merged(AL: np.ndarray) -> np.ndarray:
    chi_l, d, chi_r = AL.shape
    return AL.reshape(chi_l * d, chi_r)


def null_space(AL) -> np.ndarray:
    """Orthonormal basis ``nu`` of the complement of the columns of merged ``A_L``.

    Returns a ``(d*chi) x ((d-1)*chi)`` matrix with ``nu† nu = 1`` and
    ``nu† A_L = 0``.
    """
    AL = as_array(AL)
    M = _merged(AL)
    n, chi = M.shape
    if np.max(np.abs(M.conj().T @ M - np.eye(chi))) > ORTHONORMAL_TOL:
        raise ValueError("A_L is not left orthonormal")
    Q, R = np.linalg.qr(M, mode="complete")
    nu = Q[:, chi:]
    if np.max(np.abs(nu.conj().T @ M), initial=0.0) > 1e-12:
        # poorly conditioned QR: fall back to the SVD complement
        U, _, _ = np.linalg.svd(M, full_matrices=True)
        nu = U[:, chi:]
    return nu


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal real basis of the tangent space at ``AL``.

    ``vectors_re[a]`` is ``nu E_a`` reshaped to ``(chi, d, chi)`` with ``E_a``
    the elementary matrix of the a-th entry of ``X`` in row-major order, and
    ``vectors_im[a] = 1j * vectors_re[a]``.
    """

    AL: np.ndarray
    nu: np.ndarray

    @classmethod
    def at(cls, AL) -> "TangentBasis":
        AL = as_array(AL)
        return cls(AL, null_space(AL))

    @property
    def chi(self) -> int:
        return self.AL.shape[0]

    @property
    def d(self) -> int:
        return self.AL.shape[1]

    @property
    def n_complex(self) -> int:
        return self.nu.shape[1] * self.chi

    @property
    def dim(self) -> int:
        """Number of real directions, ``2 (d-1) chi**2``."""
        return 2 * self.n_complex

    def _vector(self, a: int) -> np.ndarray:
        row, col = divmod(a, self.chi)
        V = np.zeros((self.nu.shape[0], self.chi), dtype=complex)
        V[:, col] = self.nu[:, row]
        return V.reshape(self.AL.shape)

    @property
    def vectors_re(self) -> list[np.ndarray]:
        return [self._vector(a) for a in range(self.n_complex)]

    @property
    def vectors_im(self) -> list[np.ndarray]:
        return [1j * self._vector(a) for a in range(self.n_complex)]

    def direction(self, i: int) -> np.ndarray:
        """Real direction ``i`` in the combined ordering (all re, then all im)."""
        n = self.n_complex
        if not 0 <= i < 2 * n:
            raise IndexError(i)
        return self._vector(i) if i < n else 1j * self._vector(i - n)

    def tensor(self, coeffs: np.ndarray) -> np.ndarray:
        """Tangent tensor ``sum_i coeffs[i] * direction(i)`` for real ``coeffs``."""
        coeffs = np.asarray(coeffs, dtype=float)
        n = self.n_complex
        Xm = (coeffs[:n] + 1j * coeffs[n:]).reshape(self.nu.shape[1], self.chi)
        return (self.nu @ Xm).reshape(self.AL.shape)

    def from_complex(self, g: np.ndarray) -> np.ndarray:
        """Tensor ``sum_a g[a] * vectors_re[a]`` for complex ``g`` of length (d-1)chi^2."""
        Xm = np.asarray(g, dtype=complex).reshape(self.nu.shape[1], self.chi)
        return (self.nu @ Xm).reshape(self.AL.shape)

    def coefficients(self, B: np.ndarray) -> np.ndarray:
        """Real coordinates of a tensor; exact for gauge-fixed ``B``."""
        chi = self.chi
        Xm = self.nu.conj().T @ np.asarray(B).reshape(-1, chi)
        x = Xm.ravel()
        return np.concatenate([x.real, x.imag])

    def gauge_residual(self, B: np.ndarray) -> float:
        """``max |sum_s A_L^s† B^s|``."""
        chi = self.chi
        return float(np.max(np.abs(_merged(self.AL).conj().T @ np.asarray(B).reshape(-1, chi))))


def tangent_basis(AL) -> TangentBasis:
    return TangentBasis.at(AL)


def _dominant_pair(T: np.ndarray):
    w, vl, vr = scipy.linalg.eig(T, left=True, right=True)
    k = int(np.argmax(np.abs(w)))
    x, y = vr[:, k], vl[:, k]
    return w[k], x, y / np.vdot(y, x).conj()


def fidelity_with_gradient(target: np.ndarray, basis: TangentBasis, beta: np.ndarray):
    """``D(target, normalize(A_L + beta . V))`` and its gradient in ``beta``.

    Uses first-order perturbation theory of the dominant eigenvalues of the
    mixed transfer matrix and of the norm transfer matrix; ``target`` must be
    normalized.
    """
    AL = basis.AL
    chi, d, _ = AL.shape
    ct = target.shape[0]
    A = AL + basis.tensor(beta)
    lam, x, y = _dominant_pair(np.einsum("asb,csd->acbd", target.conj(), A).reshape(ct * chi, -1))
    nrm, xn, yn = _dominant_pair(np.einsum("asb,csd->acbd", A.conj(), A).reshape(chi * chi, -1))
    nrm = nrm.real
    X, Y = x.reshape(ct, chi), y.reshape(ct, chi)
    Xn, Yn = xn.reshape(chi, chi), yn.reshape(chi, chi)
    # d lam = sum W * dA ; d n = sum Wn * dA + sum conj(dA) * Zn
    W = np.einsum("ac,asb,bd->csd", Y.conj(), target.conj(), X)
    Wn = np.einsum("ac,asb,bd->csd", Yn.conj(), A.conj(), Xn)
    Zn = np.einsum("ac,csd,bd->asb", Yn.conj(), A, Xn)
    nu = basis.nu

    def coords(M, conj=False):
        Mm = M.reshape(chi * d, chi)
        c = (nu.T @ Mm) if not conj else (nu.conj().T @ Mm)
        return c.ravel()

    dl_re = coords(W)
    dn_re = coords(Wn) + coords(Zn, conj=True)
    dn_im = 1j * coords(Wn) - 1j * coords(Zn, conj=True)
    dlam = np.concatenate([dl_re, 1j * dl_re])
    dn = np.concatenate([dn_re, dn_im]).real
    absl = abs(lam)
    D = absl / np.sqrt(nrm)
    dabs = (np.conj(lam) * dlam).real / absl
    grad = dabs / np.sqrt(nrm) - 0.5 * absl * nrm**-1.5 * dn
    return float(D), grad


def fit_coordinates(target, basis: TangentBasis, x0=None):
    """Tangent coordinates of the state ``target`` relative to ``basis.AL``.

    Maximizes ``D(target, normalize(A_L + sum_i beta_i V_i))`` over real
    ``beta`` by BFGS with analytic gradients, then sharpens the optimum with
    Newton steps on the gradient (the value itself is too flat near the
    optimum for the line search).  Returns ``(beta, 1 - D)``.
    """
    target = normalize(as_array(target))
    x0 = np.zeros(basis.dim) if x0 is None else np.asarray(x0, dtype=float)

    def objective(beta):
        D, g = fidelity_with_gradient(target, basis, beta)
        return 1.0 - D, -g

    res = scipy.optimize.minimize(objective, x0, jac=True, method="BFGS",
                                  options={"gtol": 1e-13, "maxiter": 1000})
    beta = res.x
    h = 1e-5
    for _ in range(3):
        _, g = objective(beta)
        H = np.empty((beta.size, beta.size))
        for j in range(beta.size):
            e = np.zeros_like(beta)
            e[j] = h
            H[:, j] = (objective(beta + e)[1] - objective(beta - e)[1]) / (2 * h)
        step = np.linalg.lstsq(0.5 * (H + H.T), -g, rcond=1e-12)[0]
        beta = beta + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return beta, float(objective(beta)[0])
