"""Time-dependent variational evolution of uniform MPS.

Two integrators share the same environments and effective maps:

``"split"``
    One step evolves the centre tensor forward, ``A_C -> exp(-i G1 dt) A_C``,
    the bond matrix ``C -> exp(-i G2 dt) C``, and recombines ``A_L`` and
    ``A_R`` from polar decompositions, followed by re-canonicalization.
    First order in ``dt``.
``"rk4"``
    Classical Runge-Kutta on the equivalent gauge-covariant flow of a single
    unconstrained tensor ``A``.  The velocity is the left-gauge tangent vector
    ``-i (1 - A_L A_L†) G1(A_C) C^{-1}`` transported back to the gauge of
    ``A``.  Fourth order in ``dt`` and much cheaper per unit time.

Conventions: the two-site operator is ``h4[s1, s2, t1, t2]`` (outputs ``s``,
inputs ``t``); left environments are ``[bra, ket]`` matrices acted on by
``X -> sum_s A_L^s† X A_L^s``; right environments are ``[ket, bra]`` matrices
acted on by ``X -> sum_s A^s X A^s†``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math
from typing import Callable

import numpy as np
import scipy.linalg

from . import _kernels
from .imps import (
    MixedCanonicalState,
    as_array,
    mixed_canonical,
    normalize,
)
from .model import (
    CONNECTED_TOL,
    HamiltonianSchedule,
    ScheduleSegment,
    split_single_site,
    symmetric_field,
)

log = logging.getLogger(__name__)


class DegenerateEvolution(RuntimeError):
    """Polar recombination failed because a centre tensor lost rank."""


@dataclass(frozen=True)
class TdvpConfig:
    """Integrator settings.

    Parameters
    ----------
    dt : float
        Step size.
    exact_single_site : bool
        Apply segments flagged ``single_site_only`` as exact on-site
        unitaries, and split off on-site parts that commute with the bond
        term.
    env_tol, exp_tol : float
        Residual targets for environments and exponentials.
    method : {"split", "rk4"}
    """

    dt: float = 1e-3
    exact_single_site: bool = False
    env_tol: float = 1e-12
    exp_tol: float = 1e-12
    method: str = "split"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("env_tol", "exp_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-6:
                raise ValueError(f"{name} must lie in (0, 1e-6], got {v}")
        if self.method not in ("split", "rk4"):
            raise ValueError(f"unknown integrator {self.method!r}")

    def with_dt(self, dt: float) -> "TdvpConfig":
        return replace(self, dt=dt)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "exact_single_site": self.exact_single_site,
                "env_tol": self.env_tol, "exp_tol": self.exp_tol, "method": self.method}

    @classmethod
    def from_dict(cls, d: dict) -> "TdvpConfig":
        return cls(**d)


FAST = TdvpConfig(dt=1e-2, exact_single_site=True, method="rk4")


@dataclass
class Environments:
    L_h: np.ndarray
    R_h: np.ndarray
    energy_density: float


def _h4(h2: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(h2, dtype=complex).reshape(d, d, d, d)


def _left_block(AL, h4):
    """``[bra, ket]`` matrix of two A_L's on each side of ``h``, open on the right."""
    return np.einsum("asb,buc,sutv,atd,dve->ce", AL.conj(), AL.conj(), h4, AL, AL,
                     optimize=True)


def _right_block(AR, h4):
    """``[ket, bra]`` matrix of two A_R's on each side of ``h``, open on the left."""
    return np.einsum("atd,dve,sutv,bsc,cue->ab", AR, AR, h4, AR.conj(), AR.conj(),
                     optimize=True)


def _solve_regularized(T: np.ndarray, rhs: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    """Solve ``X - T(X) + <fixed, X> 1 = rhs`` for chi x chi ``X``.

    ``T`` is the superoperator as a chi^2 x chi^2 matrix on row-major vecs and
    ``<fixed, X> = Tr(X fixed)``.
    """
    chi = rhs.shape[0]
    eye = np.eye(chi, dtype=complex)
    M = np.eye(chi * chi, dtype=complex) - T + np.outer(eye.ravel(), fixed.T.ravel())
    return np.linalg.solve(M, rhs.ravel()).reshape(chi, chi)


def _left_superop(AL):
    chi = AL.shape[0]
    # X -> sum_s AL^s† X AL^s on [bra, ket] matrices
    return np.einsum("asb,csd->bdac", AL.conj(), AL).reshape(chi * chi, chi * chi)


def _right_superop(AR):
    chi = AR.shape[0]
    # X -> sum_s AR^s X AR^s† on [ket, bra] matrices
    return np.einsum("asb,csd->acbd", AR, AR.conj()).reshape(chi * chi, chi * chi)


def environments(state: MixedCanonicalState, seg: ScheduleSegment | np.ndarray,
                 tol: float = 1e-10) -> Environments:
    """Regularized geometric sums of the bond term to the left and right of the centre."""
    h2 = seg.two_site if isinstance(seg, ScheduleSegment) else np.asarray(seg)
    d, chi = state.d, state.chi
    h4 = _h4(h2, d)
    C = state.C
    R = C @ C.conj().T
    Lfix = C.conj().T @ C
    lh = _left_block(state.AL, h4)
    rh = _right_block(state.AR, h4)
    e = np.trace(lh @ R)
    eye = np.eye(chi)
    TL = _left_superop(state.AL)
    TR = _right_superop(state.AR)
    L_h = _solve_regularized(TL, lh - e * eye, R)
    R_h = _solve_regularized(TR, rh - e * eye, Lfix)
    res = max(
        np.max(np.abs(L_h - (TL @ L_h.ravel()).reshape(chi, chi) + np.trace(L_h @ R) * eye
                      - lh + e * eye)),
        np.max(np.abs(R_h - (TR @ R_h.ravel()).reshape(chi, chi) + np.trace(Lfix @ R_h) * eye
                      - rh + e * eye)),
    )
    if res > max(tol, 1e-10):
        raise np.linalg.LinAlgError(f"environment solve residual {res:.2e} above {tol:.1e}")
    if abs(e.imag) > 1e-10:
        log.warning("energy density has imaginary part %.2e", e.imag)
    return Environments(L_h, R_h, float(e.real))


def apply_G1(state: MixedCanonicalState, env: Environments, seg, X: np.ndarray) -> np.ndarray:
    """Effective Hermitian map on centre-site tensors."""
    h2 = seg.two_site if isinstance(seg, ScheduleSegment) else np.asarray(seg)
    h4 = _h4(h2, state.d)
    AL, AR = state.AL, state.AR
    out = np.einsum("asb,atc,sutv,cvf->buf", AL.conj(), AL, h4, X, optimize=True)
    out += np.einsum("atc,cve,sutv,fue->asf", X, AR, h4, AR.conj(), optimize=True)
    out += np.einsum("bc,csf->bsf", env.L_h, X)
    out += np.einsum("asc,cb->asb", X, env.R_h)
    return out


def apply_G2(state: MixedCanonicalState, env: Environments, seg, Y: np.ndarray) -> np.ndarray:
    """Effective Hermitian map on bond matrices."""
    h2 = seg.two_site if isinstance(seg, ScheduleSegment) else np.asarray(seg)
    h4 = _h4(h2, state.d)
    AL, AR = state.AL, state.AR
    out = np.einsum("asb,atc,sutv,ce,evf,guf->bg", AL.conj(), AL, h4, Y, AR, AR.conj(),
                    optimize=True)
    return out + env.L_h @ Y + Y @ env.R_h


def dense_G1(state, env, seg) -> np.ndarray:
    shape = state.AC.shape
    n = int(np.prod(shape))
    cols = [apply_G1(state, env, seg, e.reshape(shape)).ravel() for e in np.eye(n, dtype=complex)]
    return np.array(cols).T


def dense_G2(state, env, seg) -> np.ndarray:
    chi = state.chi
    cols = [apply_G2(state, env, seg, e.reshape(chi, chi)).ravel()
            for e in np.eye(chi * chi, dtype=complex)]
    return np.array(cols).T


def _expm_herm(G: np.ndarray, dt: float) -> np.ndarray:
    G = 0.5 * (G + G.conj().T)
    w, V = np.linalg.eigh(G)
    return (V * np.exp(-1j * dt * w)) @ V.conj().T


def _polar_unitary(M: np.ndarray) -> np.ndarray:
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    if s[-1] < 1e-14 * max(s[0], 1e-300):
        raise DegenerateEvolution("rank loss in polar decomposition")
    return U @ Vh


def tdvp_step(state: MixedCanonicalState, seg, dt: float,
              cfg: TdvpConfig | None = None) -> MixedCanonicalState:
    """One forward/backward centre step followed by polar recombination."""
    cfg = cfg or TdvpConfig(dt=dt)
    env = environments(state, seg, cfg.env_tol)
    chi, d = state.chi, state.d
    AC = (_expm_herm(dense_G1(state, env, seg), dt) @ state.AC.ravel()).reshape(chi, d, chi)
    C = (_expm_herm(dense_G2(state, env, seg), dt) @ state.C.ravel()).reshape(chi, chi)
    AL, _ = polar_recombine(AC, C)
    return mixed_canonical(AL, L0=np.eye(chi), C0=C)


def polar_recombine(AC: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A_L = U_AC^l U_C^l†`` and ``A_R = U_C^r† U_AC^r`` from polar factors."""
    chi, d, _ = AC.shape
    Ul_AC = _polar_unitary(AC.reshape(chi * d, chi))
    Ur_AC = _polar_unitary(AC.reshape(chi, d * chi))
    U_C = _polar_unitary(C)
    AL = (Ul_AC @ U_C.conj().T).reshape(chi, d, chi)
    AR = (U_C.conj().T @ Ur_AC).reshape(chi, d, chi)
    return AL, AR


def _dominant(M: np.ndarray) -> tuple[complex, np.ndarray]:
    w, V = np.linalg.eig(M)
    k = np.argmax(np.abs(w))
    return w[k], V[:, k]


def _positive_fixed_point(v: np.ndarray, chi: int) -> np.ndarray:
    X = v.reshape(chi, chi)
    X = X / np.trace(X)
    return 0.5 * (X + X.conj().T)


def left_gauge(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """``(A_L, G, lam)`` with ``A_L = G A G^{-1} / sqrt(lam)`` left orthonormal."""
    chi = A.shape[0]
    lam, v = _dominant(_left_superop(A))
    l = _positive_fixed_point(v, chi)
    G = np.linalg.cholesky(l).conj().T
    AL = np.einsum("ab,bsc->asc", G, A)
    AL = np.einsum("asb,bc->asc", AL, np.linalg.inv(G)) / np.sqrt(lam.real)
    return AL, G, float(lam.real)


def left_gauge_velocity(AL: np.ndarray, h4: np.ndarray) -> np.ndarray:
    """Gauge-fixed TDVP velocity ``-i (1 - A_L A_L†) G1(A_C) C^{-1}`` at a left-orthonormal point."""
    chi, d, _ = AL.shape
    _, v = _dominant(_right_superop(AL))
    R = _positive_fixed_point(v, chi)
    lh = _left_block(AL, h4)
    e = np.trace(lh @ R)
    L_h = _solve_regularized(_left_superop(AL), lh - e * np.eye(chi), R)
    F = np.einsum("asb,atc,sutv,cvd->bud", AL.conj(), AL, h4, AL, optimize=True)
    Y = np.einsum("atb,bvc,cq,sutv,puq->asp", AL, AL, R, h4, AL.conj(), optimize=True)
    F += np.einsum("asp,pf->asf", Y, np.linalg.inv(R))
    F += np.einsum("bc,csf->bsf", L_h, AL)
    Fm = F.reshape(chi * d, chi)
    ALm = AL.reshape(chi * d, chi)
    Fm = Fm - ALm @ (ALm.conj().T @ Fm)
    return -1j * Fm.reshape(chi, d, chi)


def velocity(A: np.ndarray, h4: np.ndarray) -> np.ndarray:
    """TDVP velocity of an arbitrary (injective) tensor, covariant under gauge and scale."""
    AL, G, lam = left_gauge(A)
    B = left_gauge_velocity(AL, h4)
    return np.sqrt(lam) * np.einsum("ab,bsc,cd->asd", np.linalg.inv(G), B, G)


def _rk4(A: np.ndarray, h4: np.ndarray, duration: float, dt: float) -> np.ndarray:
    n = max(1, math.ceil(duration / dt - 1e-9))
    # the compiled fixed-point solver shifts around one, so feed it a normalized tensor
    return _kernels.rk4(np.ascontiguousarray(normalize(A), dtype=complex),
                        np.ascontiguousarray(h4, dtype=complex), n, duration / n)


def apply_onsite(A: np.ndarray, U: np.ndarray) -> np.ndarray:
    return np.einsum("st,atb->asb", U, A)


def _onsite_split(seg: ScheduleSegment):
    """``(U_onsite, connected)`` if the on-site part commutes with the rest, else None."""
    op, rest = split_single_site(seg.two_site)
    if not np.any(np.abs(op) > CONNECTED_TOL):
        return None
    field = symmetric_field(op)
    if np.max(np.abs(field @ rest - rest @ field)) > CONNECTED_TOL:
        return None
    U = scipy.linalg.expm(-1j * seg.duration * op)
    if np.max(np.abs(rest), initial=0.0) <= CONNECTED_TOL:
        return U, None
    return U, rest


def _segment_plan(seg: ScheduleSegment, cfg: TdvpConfig):
    """Yield ("onsite", U) and ("flow", h2) actions that realize one segment."""
    if cfg.exact_single_site:
        split = _onsite_split(seg)
        if split is not None:
            U, rest = split
            plan = [("onsite", U)]
            if rest is not None:
                plan.append(("flow", rest))
            return plan
    return [("flow", seg.two_site)]


def evolve_segment(state_or_tensor, seg: ScheduleSegment, cfg: TdvpConfig,
                   duration: float | None = None):
    """Evolve through (part of) one segment; returns the same kind of object it was given."""
    duration = seg.duration if duration is None else duration
    if duration != seg.duration:
        seg = ScheduleSegment(duration, seg.two_site, seg.single_site_only)
    canonical = isinstance(state_or_tensor, MixedCanonicalState)
    if cfg.method == "rk4":
        A = state_or_tensor.AL if canonical else as_array(state_or_tensor)
        d = A.shape[1]
        for kind, payload in _segment_plan(seg, cfg):
            if kind == "onsite":
                A = apply_onsite(A, payload)
            else:
                A = _rk4(A, _h4(payload, d), duration, cfg.dt)
        return mixed_canonical(A) if canonical else A
    state = state_or_tensor if canonical else mixed_canonical(state_or_tensor)
    for kind, payload in _segment_plan(seg, cfg):
        if kind == "onsite":
            state = mixed_canonical(apply_onsite(state.AL, payload), L0=np.eye(state.chi),
                                    C0=state.C)
        else:
            n = max(1, math.ceil(duration / cfg.dt - 1e-9))
            for _ in range(n):
                state = tdvp_step(state, payload, duration / n, cfg)
    return state if canonical else state.AL


def propagate_tensor(A, schedule: HamiltonianSchedule, n_periods: int,
                     cfg: TdvpConfig) -> np.ndarray:
    """Evolve a bare tensor for ``n_periods`` drive periods (output normalized, any gauge)."""
    if n_periods < 0:
        raise ValueError("n_periods must be non-negative")
    A = as_array(A)
    for _ in range(n_periods):
        for seg in schedule.segments:
            A = evolve_segment(A, seg, cfg)
    return A


def propagate(state, schedule: HamiltonianSchedule, n_periods: int,
              cfg: TdvpConfig) -> MixedCanonicalState:
    """Apply every segment in order, ``n_periods`` times, returning a canonical state."""
    if n_periods < 0:
        raise ValueError("n_periods must be non-negative")
    if not isinstance(state, MixedCanonicalState):
        state = mixed_canonical(as_array(state))
    if n_periods == 0:
        return state
    if cfg.method == "rk4":
        return mixed_canonical(propagate_tensor(state.AL, schedule, n_periods, cfg))
    for _ in range(n_periods):
        for seg in schedule.segments:
            state = evolve_segment(state, seg, cfg)
    return state


def leakage(state: MixedCanonicalState, seg) -> float:
    """Squared norm per site of the part of ``H|psi>`` outside the tangent space."""
    h2 = seg.two_site if isinstance(seg, ScheduleSegment) else np.asarray(seg)
    d, chi = state.d, state.chi
    env = environments(state, h2)
    e = env.energy_density
    ht = np.asarray(h2, dtype=complex) - e * np.eye(d * d)
    ht4 = _h4(ht, d)
    AL, AC = state.AL, state.AC
    theta2 = np.einsum("asb,btc->astc", AL, AC).reshape(chi, d * d, chi)
    same = np.einsum("apb,pq,aqb->", theta2.conj(), ht @ ht, theta2)
    theta3 = np.einsum("asb,btc,cud->astud", AL, AL, AC)
    one = np.eye(d)
    h01 = np.kron(ht, one)
    h12 = np.kron(one, ht)
    t3 = theta3.reshape(chi, d**3, chi)
    neighbour = np.einsum("apb,pq,aqb->", t3.conj(), h01 @ h12, t3)
    # non-overlapping pairs: regularized left sum against the right block
    R = state.C @ state.C.conj().T
    lh = _left_block(AL, ht4)
    L_sum = _solve_regularized(_left_superop(AL), lh, R)
    rh = np.einsum("atd,dve,ef,sutv,bsc,cuf->ab", AL, AL, R, ht4, AL.conj(), AL.conj(),
                   optimize=True)
    far = np.trace(L_sum @ rh)
    total = same.real + 2 * neighbour.real + 2 * far.real
    G1AC = apply_G1(state, env, h2, AC).reshape(chi * d, chi)
    ALm = AL.reshape(chi * d, chi)
    proj = G1AC - ALm @ (ALm.conj().T @ G1AC)
    gamma2 = total - np.linalg.norm(proj) ** 2
    if gamma2 < -1e-10:
        log.warning("negative leakage %.2e clamped to zero", gamma2)
    return max(float(gamma2), 0.0)
