"""Exact finite-ring reference for the kicked Ising chain.

Basis conventions: site 0 is the most significant bit of the basis index and
bit value 0 is spin up (``Z = +1``).  Bonds close periodically, so an
``L``-site ring has ``L`` bonds (two coincident bonds for ``L = 2``, none for
``L = 1``).  The one-period propagator factorizes exactly into a diagonal
phase (``J ZZ + h Z`` for ``T/2``) followed by on-site x-rotations
(``g X`` for ``T/2``).
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .imps import as_array
from .model import KickedIsingParams, X, Y, Z

log = logging.getLogger(__name__)

MAX_AMPLITUDES = 2**24
DENSE_MAX_L = 14
DEGENERACY_TOL = 1e-10


def _check_size(L: int, limit: int):
    if L < 1:
        raise ValueError("need at least one site")
    if L > limit:
        raise ValueError(f"L={L} exceeds the size guard of {limit} sites")


def z_values(L: int) -> np.ndarray:
    """``(2**L, L)`` array of ``Z_i`` eigenvalues for every basis state."""
    idx = np.arange(2**L)
    bits = (idx[:, None] >> (L - 1 - np.arange(L))[None, :]) & 1
    return 1 - 2 * bits


def mps_to_statevector(A_L, L: int) -> np.ndarray:
    """Normalized ring amplitudes ``Tr[A^{s_1} ... A^{s_L}]``."""
    A = as_array(A_L)
    chi, d, _ = A.shape
    if d**L > MAX_AMPLITUDES:
        raise ValueError(f"{d}**{L} amplitudes exceed the memory guard")

    def chain(n):
        M = A.transpose(1, 0, 2)  # (s, a, b)
        for _ in range(n - 1):
            M = np.einsum("xab,sbc->xsac", M, A.transpose(1, 0, 2)).reshape(-1, chi, chi)
        return M

    nl = L // 2
    if nl == 0:
        v = np.einsum("saa->s", A.transpose(1, 0, 2))
    else:
        left = chain(nl)
        right = chain(L - nl)
        v = np.einsum("xab,yba->xy", left, right).reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("MPS has zero norm on this ring")
    return v / norm


def translate(v: np.ndarray, L: int, shift: int = 1) -> np.ndarray:
    """Move the amplitude of site ``i`` to site ``i + shift``."""
    dest = [(i + shift) % L for i in range(L)]
    return np.moveaxis(v.reshape((2,) * L), list(range(L)), dest).reshape(-1)


def reflect(v: np.ndarray, L: int) -> np.ndarray:
    """Mirror the ring, site ``i`` to site ``L - 1 - i``."""
    return np.moveaxis(v.reshape((2,) * L), list(range(L)), list(range(L))[::-1]).reshape(-1)


@dataclass(frozen=True)
class KickedIsingPropagator:
    """Matrix-free one-period propagator on an ``L``-site ring."""

    params: KickedIsingParams
    L: int

    def __post_init__(self):
        _check_size(self.L, 24)

    @property
    def dim(self) -> int:
        return 2**self.L

    def h1_diagonal(self) -> np.ndarray:
        z = z_values(self.L)
        p = self.params
        zz = np.zeros(self.dim)
        if self.L > 1:
            zz = np.sum(z * np.roll(z, -1, axis=1), axis=1)
        return p.J * zz + p.h * z.sum(axis=1)

    def phase_mask(self, t: float | None = None) -> np.ndarray:
        t = self.params.T / 2 if t is None else t
        return np.exp(-1j * t * self.h1_diagonal())

    def rotation(self, t: float | None = None) -> np.ndarray:
        t = self.params.T / 2 if t is None else t
        return scipy.linalg.expm(-1j * t * self.params.g * X)

    def apply_rotations(self, v: np.ndarray, t: float | None = None) -> np.ndarray:
        R = self.rotation(t)
        shape = v.shape
        batch = v.reshape(2**self.L, -1)
        out = batch.reshape((2,) * self.L + (batch.shape[1],))
        for i in range(self.L):
            out = np.tensordot(R, out, axes=(1, i))
            out = np.moveaxis(out, 0, i)
        return out.reshape(shape)

    def apply(self, v: np.ndarray, n_periods: int = 1) -> np.ndarray:
        mask = self.phase_mask()
        if v.ndim == 2:
            mask = mask[:, None]
        for _ in range(n_periods):
            v = self.apply_rotations(mask * v)
        return v

    def dense(self) -> np.ndarray:
        _check_size(self.L, 12)
        return self.apply(np.eye(self.dim, dtype=complex))

    def h1(self) -> np.ndarray:
        return np.diag(self.h1_diagonal()).astype(complex)

    def h2(self) -> np.ndarray:
        _check_size(self.L, 12)
        return self.params.g * sum_onsite(X, self.L)


def build_U_T(params: KickedIsingParams, L: int) -> KickedIsingPropagator:
    return KickedIsingPropagator(params, L)


def sum_onsite(op: np.ndarray, L: int) -> np.ndarray:
    """Dense ``sum_i op_i`` on ``L`` sites."""
    dim = 2**L
    out = np.zeros((dim, dim), dtype=complex)
    for i in range(L):
        out += np.kron(np.kron(np.eye(2**i), op), np.eye(2 ** (L - i - 1)))
    return out


def half_chain_entropy(v: np.ndarray, L: int, cut: int | None = None) -> float:
    """Von Neumann entropy of sites ``[0, cut)`` (default ``L // 2``)."""
    cut = L // 2 if cut is None else cut
    s = np.linalg.svd(v.reshape(2**cut, -1), compute_uv=False)
    p = s**2
    p = p[p > 1e-300]
    p = p / p.sum()
    return float(-np.sum(p * np.log(p)))


@dataclass
class ExactSeries:
    times: np.ndarray
    entropy: np.ndarray
    states: list | None = None


def exact_evolve(v: np.ndarray, params: KickedIsingParams, n_periods: int,
                 substeps: int = 1, keep_states: bool = False) -> ExactSeries:
    """Exact evolution with ``substeps`` equally spaced snapshots per half period.

    The entropy is the half-ring entropy (two cuts on a ring).
    """
    L = int(round(math.log2(v.size)))
    _check_size(L, 20)
    U = KickedIsingPropagator(params, L)
    half = params.T / 2
    dt = half / substeps
    times, ent, states = [0.0], [half_chain_entropy(v, L)], [v] if keep_states else None
    mask = U.phase_mask(dt)
    t = 0.0
    for _ in range(n_periods):
        for _ in range(substeps):
            v = mask * v
            t += dt
            times.append(t)
            ent.append(half_chain_entropy(v, L))
            if keep_states:
                states.append(v)
        for _ in range(substeps):
            v = U.apply_rotations(v, dt)
            t += dt
            times.append(t)
            ent.append(half_chain_entropy(v, L))
            if keep_states:
                states.append(v)
    return ExactSeries(np.array(times), np.array(ent), states)


# ---------------------------------------------------------------- symmetry sectors

def _rotate_bits(x: np.ndarray, L: int, shift: int) -> np.ndarray:
    """Basis index after moving site ``i`` to ``i + shift`` (site 0 = MSB)."""
    shift %= L
    if shift == 0:
        return x.copy()
    mask = (1 << L) - 1
    return ((x >> shift) | (x << (L - shift))) & mask


def _reverse_bits(x: np.ndarray, L: int) -> np.ndarray:
    out = np.zeros_like(x)
    for i in range(L):
        out |= ((x >> i) & 1) << (L - 1 - i)
    return out


@dataclass(frozen=True)
class SectorBasis:
    """Orthonormal symmetry-adapted basis as a sparse ``2**L x D`` matrix."""

    L: int
    momentum_k: int
    parity: int | None
    matrix: sp.csc_matrix
    representatives: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.conj().T @ v

    def embed(self, c: np.ndarray) -> np.ndarray:
        return self.matrix @ c


def sector_basis(L: int, k: int, parity: int | None = None) -> SectorBasis:
    """Momentum ``k`` (and optional reflection parity) sector of the ring.

    Translation eigenvalue ``exp(2 pi i k / L)`` for a shift of every site by
    one.  Parity is only defined for ``k = 0`` or ``k = L/2``.
    """
    _check_size(L, 20)
    if not 0 <= k < L:
        raise ValueError(f"momentum k must lie in [0, {L})")
    if parity is not None:
        if parity not in (1, -1):
            raise ValueError("parity must be +1, -1 or None")
        if (2 * k) % L != 0:
            raise ValueError("parity sectors exist only for k = 0 or k = L/2")
    n = 2**L
    states = np.arange(n, dtype=np.int64)
    images, chars = [], []
    for j in range(L):
        images.append(_rotate_bits(states, L, j))
        chars.append(np.exp(-2j * np.pi * k * j / L))
    if parity is not None:
        refl = _reverse_bits(states, L)
        for j in range(L):
            images.append(_rotate_bits(refl, L, j))
            chars.append(parity * np.exp(-2j * np.pi * k * j / L))
    images = np.array(images)  # (|G|, n): g(s)
    chars = np.array(chars)
    reps = images.min(axis=0)
    rep_states = np.unique(reps)
    cols, rows, vals, kept = [], [], [], []
    for col_rep in rep_states:
        # projector applied to the representative: sum_g chi(g)* ... accumulated per image
        imgs = images[:, col_rep]
        amp: dict[int, complex] = {}
        for state, ch in zip(imgs, chars):
            amp[int(state)] = amp.get(int(state), 0) + ch
        keys = np.fromiter(amp.keys(), dtype=np.int64)
        a = np.fromiter(amp.values(), dtype=complex)
        nrm = np.linalg.norm(a)
        if nrm < 1e-10:
            continue
        c = len(kept)
        kept.append(col_rep)
        rows.append(keys)
        cols.append(np.full(keys.size, c))
        vals.append(a / nrm)
    if kept:
        B = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, len(kept)))
    else:
        B = sp.csc_matrix((n, 0), dtype=complex)
    return SectorBasis(L, k, parity, B, np.array(kept, dtype=np.int64))


def sector_propagator(U: KickedIsingPropagator, sector: SectorBasis,
                      batch: int = 256) -> np.ndarray:
    """Dense ``B† U_T B`` on a symmetry sector."""
    B = sector.matrix
    D = sector.dim
    out = np.empty((D, D), dtype=complex)
    for start in range(0, D, batch):
        cols = B[:, start:start + batch].toarray()
        out[:, start:start + batch] = B.conj().T @ U.apply(cols)
    return out


def unitary_eigh(Usec: np.ndarray):
    """Eigenphases and orthonormal eigenvectors of a unitary via complex Schur form."""
    T, Zs = scipy.linalg.schur(Usec, output="complex")
    return np.diag(T), Zs


@dataclass
class IprResult:
    ipr: float
    projection_weight: float
    degenerate: bool
    dim: int
    quasienergies: np.ndarray | None = None


def ipr(A_L, params: KickedIsingParams, L: int, sector: SectorBasis | None = None,
        return_details: bool = False):
    """Inverse participation ratio of the ring MPS over Floquet eigenstates of a sector.

    Eigenphases closer than 1e-10 are grouped and contribute the squared
    weight of the projection onto the whole group.
    """
    _check_size(L, DENSE_MAX_L)
    sector = sector if sector is not None else sector_basis(L, 0, 1)
    v = mps_to_statevector(A_L, L)
    c = sector.project(v)
    weight = float(np.vdot(c, c).real)
    if weight < 1 - 1e-6:
        log.warning("MPS has only weight %.6f in the sector", weight)
    c = c / math.sqrt(weight)
    U = KickedIsingPropagator(params, L)
    E, V = unitary_eigh(sector_propagator(U, sector))
    ov = V.conj().T @ c
    phases = np.angle(E)
    order = np.argsort(phases)
    groups, current = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if phases[b] - phases[a] <= DEGENERACY_TOL:
            current.append(b)
        else:
            groups.append(current)
            current = [b]
    groups.append(current)
    # wrap-around at the branch cut
    if len(groups) > 1 and phases[order[0]] + 2 * np.pi - phases[order[-1]] <= DEGENERACY_TOL:
        groups[0] = groups[0] + groups.pop()
    degenerate = any(len(g) > 1 for g in groups)
    value = float(sum(np.sum(np.abs(ov[g]) ** 2) ** 2 for g in groups))
    if return_details:
        return IprResult(value, weight, degenerate, sector.dim, 1j * np.log(E))
    return value


def quasienergies(E: np.ndarray, T: float = 1.0) -> np.ndarray:
    """``e_n = i ln E_n / T`` on the principal branch, ``e_n`` in ``(-pi/T, pi/T]``."""
    return (1j * np.log(E)).real / T


# ---------------------------------------------------------------- effective Hamiltonian

@dataclass
class EffectiveHamiltonian:
    order: int
    matrix: np.ndarray
    L: int
    variant: str = "bch"


def _comm(a, b):
    return a @ b - b @ a


def h_eff4(params: KickedIsingParams, L: int, variant: str = "bch") -> EffectiveHamiltonian:
    """Fourth-order effective Hamiltonian of the two-step drive on an ``L``-site ring.

    ``variant="bch"`` is the Baker-Campbell-Hausdorff series of
    ``log(exp(-i T H2 / 2) exp(-i T H1 / 2))`` through fourth order:

        (H1 + H2)/2 - (i T/8)[H2, H1]
        - (T^2/96)([H1,[H1,H2]] + [H2,[H2,H1]])
        - (i T^3/384)[H1,[H2,[H2,H1]]]

    ``variant="alternate"`` uses ``+1/96`` for the third-order pair and
    ``-(i/384)[H2,[H1,[H1,H2]]]`` for the fourth-order term.
    """
    _check_size(L, 12)
    U = KickedIsingPropagator(params, L)
    H1, H2 = U.h1(), U.h2()
    T = params.T
    c21 = _comm(H2, H1)
    third = _comm(H1, _comm(H1, H2)) + _comm(H2, c21)
    if variant == "bch":
        H = 0.5 * (H1 + H2) - 1j * T / 8 * c21 - T**2 / 96 * third \
            - 1j * T**3 / 384 * _comm(H1, _comm(H2, c21))
    elif variant == "alternate":
        H = 0.5 * (H1 + H2) - 1j * T / 8 * c21 + T**2 / 96 * third \
            - 1j * T**3 / 384 * _comm(H2, _comm(H1, _comm(H1, H2)))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return EffectiveHamiltonian(4, H, L, variant)


def heff_truncation_error(params: KickedIsingParams, L: int, variant: str = "bch") -> float:
    """Spectral-norm distance between ``exp(-i T H_eff)`` and the exact propagator."""
    H = h_eff4(params, L, variant).matrix
    Ueff = scipy.linalg.expm(-1j * params.T * H)
    return float(np.linalg.norm(Ueff - KickedIsingPropagator(params, L).dense(), 2))


def orbit_eigenstate_overlaps(A_L, params: KickedIsingParams, L: int,
                              variant: str = "bch"):
    """``(e_n, |<phi_n|psi>|^2)`` over all eigenstates of the effective Hamiltonian."""
    _check_size(L, 12)
    H = h_eff4(params, L, variant).matrix
    e, V = np.linalg.eigh(0.5 * (H + H.conj().T))
    v = mps_to_statevector(A_L, L)
    return e, np.abs(V.conj().T @ v) ** 2


def floquet_eth_scan(params: KickedIsingParams, L: int, observable: str = "x",
                     k: int = 0, parity: int | None = 1):
    """``(e_n, <phi_n| O_0 |phi_n>)`` for Floquet eigenstates of a symmetry sector.

    ``observable`` is a one-site Pauli name, averaged over the ring (which
    equals its value on any site in a translation sector).
    """
    _check_size(L, DENSE_MAX_L)
    sector = sector_basis(L, k, parity)
    U = KickedIsingPropagator(params, L)
    E, V = unitary_eigh(sector_propagator(U, sector))
    op = {"x": X, "y": Y, "z": Z}[observable]
    vals = np.empty(len(E))
    B = sector.matrix
    for start in range(0, len(E), 128):
        full = B @ V[:, start:start + 128]
        Ov = _apply_onsite_sum(op, full, L) / L
        vals[start:start + 128] = np.einsum("ij,ij->j", full.conj(), Ov).real
    return quasienergies(E, params.T), vals


def _apply_onsite_sum(op: np.ndarray, v: np.ndarray, L: int) -> np.ndarray:
    batch = v.shape[1]
    t = v.reshape((2,) * L + (batch,))
    out = np.zeros_like(t)
    for i in range(L):
        out += np.moveaxis(np.tensordot(op, t, axes=(1, i)), 0, i)
    return out.reshape(v.shape)
