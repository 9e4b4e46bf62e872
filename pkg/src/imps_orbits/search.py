"""Periodic-orbit search by tangent-space gradient ascent of the return fidelity.

The cost of a left-orthonormal tensor ``A_L`` is the fidelity density between
the state and its image after ``n_periods`` drive periods.  Gradients are
central differences along the orthonormal tangent basis; steps use an
adaptive learning rate that grows after every successful step and shrinks
until an improving step is found.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from .imps import (
    CanonicalizationStall,
    DegenerateInput,
    EigensolverError,
    MpsTensor,
    as_array,
    fidelity_density,
    left_orthonormalize,
    normalize,
    random_tensor,
    second_tm_eigenvalue,
    spatial_inversion,
    transfer_matrix,
    spectral_radius,
)
from .model import HamiltonianSchedule, KickedIsingParams, kicked_ising
from .tangent import fit_coordinates, tangent_basis
from .tdvp import DegenerateEvolution, TdvpConfig, propagate_tensor

log = logging.getLogger(__name__)

CONVERGED_INFIDELITY = 1e-9
DUPLICATE_FIDELITY = 1 - 1e-5
INJECTIVITY_LIMIT = 1 - 1e-6

HALT_REASONS = ("target_met", "improvement_below_tol", "learning_rate_underflow",
                "canonicalization_stall", "max_iterations", "stalled")


@dataclass(frozen=True)
class SearchConfig:
    """Gradient-ascent settings.

    ``dt_coarse``/``dt_fine`` are integrator step sizes for the two search
    stages; ``integrator`` and ``exact_single_site`` select the propagator
    (see :class:`imps_orbits.tdvp.TdvpConfig`).  ``max_iter`` caps the number
    of gradient steps per stage.  With ``polish``, a stage that ends within
    ``polish_below`` of unit fidelity is finished by Newton iterations on the
    stroboscopic map (see :func:`newton_polish`).  A positive ``stall_window``
    stops a stage whose infidelity ``1 - F`` has not dropped below
    ``stall_ratio`` times its value ``stall_window`` steps earlier.
    """

    delta: float = 1e-5
    c0: float = 0.1
    xi: float = 1.2
    tau: float = 1.4
    eps: float = 1e-14
    max_c: float = 1.0
    tol: float = 1e-15
    atol: float = 1e-15
    n_periods: int = 1
    dt_coarse: float = 1e-2
    dt_fine: float = 1e-3
    integrator: str = "split"
    exact_single_site: bool = False
    max_iter: int = 20000
    two_stage_min_chi: int = 3
    polish: bool = False
    polish_below: float = 1e-3
    polish_iter: int = 12
    stall_window: int = 0
    stall_ratio: float = 0.5

    def __post_init__(self):
        if not self.xi > 1 or not self.tau > 1:
            raise ValueError("growth and shrink factors must exceed one")
        if not 0 < self.eps < self.c0 <= self.max_c:
            raise ValueError("need 0 < eps < c0 <= max_c")
        if self.n_periods < 1:
            raise ValueError("n_periods must be at least one")

    @classmethod
    def fast(cls, **overrides) -> "SearchConfig":
        """Runge-Kutta propagation with exact on-site segments at accuracy-matched steps."""
        base = dict(integrator="rk4", exact_single_site=True, dt_coarse=5e-2, dt_fine=1e-2,
                    max_iter=400, polish=True, stall_window=60)
        base.update(overrides)
        return cls(**base)

    def tdvp(self, dt: float | None = None) -> TdvpConfig:
        return TdvpConfig(dt=self.dt_fine if dt is None else dt, method=self.integrator,
                          exact_single_site=self.exact_single_site)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        return cls(**d)


@dataclass
class OrbitRecord:
    A_L0: np.ndarray
    n_periods: int
    fidelity: float
    J: float
    chi: int
    converged: bool
    halted_reason: str
    inversion_symmetric: bool | None = None
    seed: int | None = None
    iterations: int = 0
    params: dict | None = None
    history: list = field(default_factory=list)
    polished: bool = False

    def __post_init__(self):
        if self.halted_reason not in HALT_REASONS:
            raise ValueError(f"unknown halt reason {self.halted_reason!r}")
        if self.converged and self.fidelity < 1 - CONVERGED_INFIDELITY:
            raise ValueError("converged record must have fidelity >= 1 - 1e-9")

    @property
    def kicked_params(self) -> KickedIsingParams:
        if self.params is None:
            return KickedIsingParams(self.J)
        return KickedIsingParams.from_dict(self.params)

    @property
    def schedule(self) -> HamiltonianSchedule:
        return kicked_ising(self.kicked_params)

    def to_json(self, with_history: bool = False) -> dict:
        out = {
            "A_L0": MpsTensor(self.A_L0).to_json(),
            "n_periods": self.n_periods,
            "fidelity": self.fidelity,
            "J": self.J,
            "chi": self.chi,
            "converged": self.converged,
            "halted_reason": self.halted_reason,
            "inversion_symmetric": self.inversion_symmetric,
            "seed": self.seed,
            "iterations": self.iterations,
            "params": self.params,
            "polished": self.polished,
        }
        if with_history:
            out["history"] = list(self.history)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "OrbitRecord":
        return cls(
            A_L0=MpsTensor.from_json(obj["A_L0"]).data,
            n_periods=obj["n_periods"], fidelity=obj["fidelity"], J=obj["J"], chi=obj["chi"],
            converged=obj["converged"], halted_reason=obj["halted_reason"],
            inversion_symmetric=obj.get("inversion_symmetric"), seed=obj.get("seed"),
            iterations=obj.get("iterations", 0), params=obj.get("params"),
            history=obj.get("history", []), polished=obj.get("polished", False),
        )


def cost(A_L, schedule: HamiltonianSchedule, n_periods: int, cfg: SearchConfig | TdvpConfig,
         dt: float | None = None) -> float:
    """Return fidelity of the (normalized) state after ``n_periods`` periods."""
    tcfg = cfg.tdvp(dt) if isinstance(cfg, SearchConfig) else (
        cfg if dt is None else cfg.with_dt(dt))
    A = normalize(as_array(A_L))
    return fidelity_density(propagate_tensor(A, schedule, n_periods, tcfg), A)


def tangent_gradient(A_L, schedule: HamiltonianSchedule, cfg: SearchConfig,
                     dt: float | None = None, n_periods: int | None = None,
                     raw: bool = False):
    """Central-difference gradient of the cost along the tangent basis.

    Returns the ascent direction ``dA = sum_a (g_re + i g_im)_a V_re^a``
    normalized to unit fidelity norm.  With ``raw`` also returns the
    coefficient vector ``(g_re, g_im)`` and the unnormalized tensor.
    """
    A = as_array(A_L)
    n_periods = cfg.n_periods if n_periods is None else n_periods
    basis = tangent_basis(A)
    g = np.empty(basis.dim)
    for i in range(basis.dim):
        V = basis.direction(i)
        fp = cost(A + cfg.delta * V, schedule, n_periods, cfg, dt)
        fm = cost(A - cfg.delta * V, schedule, n_periods, cfg, dt)
        g[i] = (fp - fm) / (2 * cfg.delta)
    n = basis.n_complex
    dA = basis.from_complex(g[:n] + 1j * g[n:])
    norm2 = spectral_radius(transfer_matrix(dA, dA)) if np.any(g) else 0.0
    direction = dA / math.sqrt(norm2) if norm2 > 1e-32 else np.zeros_like(dA)
    if raw:
        return direction, g, dA
    return direction


@dataclass
class StepResult:
    A_L: np.ndarray
    c: float
    fidelity: float
    halted: bool


def gradient_descent_step(A_L, c: float, schedule: HamiltonianSchedule, cfg: SearchConfig,
                          dt: float | None = None, F0: float | None = None,
                          direction: np.ndarray | None = None) -> StepResult:
    """One adaptive-rate ascent step.

    Tries ``A_L + c dA``; on success the rate grows by ``xi`` (capped at
    ``max_c``), otherwise it is divided by ``tau`` until the cost improves.
    If the rate falls below ``eps`` the input is returned with ``halted``.
    """
    A = as_array(A_L)
    n_periods = cfg.n_periods
    F0 = cost(A, schedule, n_periods, cfg, dt) if F0 is None else F0
    dA = tangent_gradient(A, schedule, cfg, dt) if direction is None else direction
    if not np.any(dA):
        return StepResult(A, c, F0, True)
    first = True
    while c >= cfg.eps:
        trial = normalize(A + c * dA)
        F1 = cost(trial, schedule, n_periods, cfg, dt)
        if F1 > F0:
            c_new = min(c * cfg.xi, cfg.max_c) if first else c
            return StepResult(trial, c_new, F1, False)
        first = False
        c = c / cfg.tau
    return StepResult(A, c, F0, True)


def _ascend(A, schedule, cfg: SearchConfig, dt: float, history: list,
            handoff: float | None = None):
    """Run the gradient-ascent loop at fixed ``dt``; returns (A, F, reason, iterations).

    With ``handoff`` the loop also stops (reason ``"handoff"``) once
    ``1 - F <= handoff``.
    """
    c = cfg.c0
    F = cost(A, schedule, cfg.n_periods, cfg, dt)
    history.append(F)
    dF = math.inf
    it = 0
    reason = "target_met"
    while dF > cfg.tol or 1 - F > cfg.atol:
        if it >= cfg.max_iter:
            reason = "max_iterations"
            break
        A, _ = left_orthonormalize(A)
        step = gradient_descent_step(A, c, schedule, cfg, dt, F0=F)
        it += 1
        if step.halted:
            reason = "learning_rate_underflow"
            break
        dF = step.fidelity - F
        A, c, F = step.A_L, step.c, step.fidelity
        history.append(F)
        w = cfg.stall_window
        if w and it >= w and 1 - F > cfg.stall_ratio * (1 - history[-w - 1]):
            reason = "stalled"
            break
        if handoff is not None and 1 - F <= handoff:
            reason = "handoff"
            break
    else:
        reason = "target_met" if 1 - F <= cfg.atol else "improvement_below_tol"
    A, _ = left_orthonormalize(A)
    return A, F, reason, it


def map_coordinates(A_L, schedule: HamiltonianSchedule, cfg: SearchConfig,
                    dt: float | None = None, basis=None, step: float = 1e-6):
    """Residual and Jacobian of the stroboscopic map in tangent coordinates at ``A_L``.

    Returns ``(r, M)`` where ``r`` are the coordinates of the image of
    ``A_L`` and column ``i`` of ``M`` is the central difference of image
    coordinates under displacements ``+-step`` along direction ``i``.
    """
    A = as_array(A_L)
    basis = tangent_basis(A) if basis is None else basis
    tcfg = cfg.tdvp(dt)

    def image(X, x0=None):
        return fit_coordinates(propagate_tensor(normalize(X), schedule, cfg.n_periods, tcfg),
                               basis, x0)[0]

    r = image(A)
    M = np.empty((basis.dim, basis.dim))
    # displaced images lie within ~step of r, so their fits start there
    for i in range(basis.dim):
        V = basis.direction(i)
        M[:, i] = (image(A + step * V, r) - image(A - step * V, r)) / (2 * step)
    return r, M


def newton_polish(A_L, schedule: HamiltonianSchedule, cfg: SearchConfig,
                  dt: float | None = None, F0: float | None = None):
    """Newton iterations for the fixed point of the stroboscopic map.

    Each step solves ``(M - 1) x = -r`` in the least-squares sense and is
    accepted only if the return fidelity increases.  If neither the full step
    nor its halvings improve ``F``, damped (Levenberg-Marquardt) steps with
    growing damping are tried, which handles multipliers close to one.
    Returns ``(A_L, F, iterations)``.
    """
    A, _ = left_orthonormalize(as_array(A_L))
    F = cost(A, schedule, cfg.n_periods, cfg, dt) if F0 is None else F0
    it = 0
    for it in range(1, cfg.polish_iter + 1):
        if 1 - F <= cfg.atol:
            break
        basis = tangent_basis(A)
        r, M = map_coordinates(A, schedule, cfg, dt, basis)
        K = M - np.eye(basis.dim)
        x = np.linalg.lstsq(K, -r, rcond=1e-10)[0]
        candidates = [x * 0.5**k for k in range(4)]
        KtK, Ktr = K.T @ K, K.T @ r
        scale = np.trace(KtK) / basis.dim
        candidates += [np.linalg.solve(KtK + mu * scale * np.eye(basis.dim), -Ktr)
                       for mu in (1e-4, 1e-3, 1e-2, 1e-1, 1.0)]
        improved = False
        for x in candidates:
            trial = normalize(A + basis.tensor(x))
            F1 = cost(trial, schedule, cfg.n_periods, cfg, dt)
            if F1 > F:
                improved = True
                break
        if not improved:
            break
        A, _ = left_orthonormalize(trial)
        F = F1
    return A, F, it


def _settled(F: float, cfg: SearchConfig) -> str:
    return "target_met" if 1 - F <= cfg.atol else "improvement_below_tol"


def _finish_with_newton(A, F, reason, schedule, cfg: SearchConfig, dt, history):
    """Newton polish after a handoff or a stall; returns (A, F, reason, iterations, polished).

    After a handoff that Newton cannot finish, plain ascent resumes and is
    polished once more if it gets back within ``polish_below``.
    """
    A, F, _ = newton_polish(A, schedule, cfg, dt, F0=F)
    history.append(F)
    if 1 - F <= CONVERGED_INFIDELITY:
        return A, F, _settled(F, cfg), 0, True
    if reason == "stalled":
        return A, F, reason, 0, True
    A, F, reason, it = _ascend(A, schedule, cfg, dt, history)
    if 1 - F <= cfg.polish_below and 1 - F > CONVERGED_INFIDELITY:
        A, F, _ = newton_polish(A, schedule, cfg, dt, F0=F)
        history.append(F)
    if 1 - F <= CONVERGED_INFIDELITY:
        reason = _settled(F, cfg)
    return A, F, reason, it, True


def refine(A0, schedule: HamiltonianSchedule, cfg: SearchConfig, chi: int | None = None,
           seed: int | None = None, J: float | None = None, params: dict | None = None,
           keep_history: bool = False) -> OrbitRecord:
    """Gradient ascent from a given tensor (coarse stage first for large chi)."""
    A = as_array(A0)
    chi = A.shape[0] if chi is None else chi
    stages = [cfg.dt_fine]
    if chi >= cfg.two_stage_min_chi and cfg.dt_coarse != cfg.dt_fine:
        stages = [cfg.dt_coarse, cfg.dt_fine]
    history: list = []
    total = 0
    try:
        A, _ = left_orthonormalize(normalize(A))
        polished = False
        handoff = cfg.polish_below if cfg.polish else None
        for dt in stages:
            A, F, reason, it = _ascend(A, schedule, cfg, dt, history, handoff)
            total += it
            if handoff is not None and reason in ("handoff", "stalled"):
                A, F, reason, it, polished = _finish_with_newton(A, F, reason, schedule, cfg,
                                                                  dt, history)
                total += it
            if reason == "stalled":
                break
        F = cost(A, schedule, cfg.n_periods, cfg, cfg.dt_fine)
    except (CanonicalizationStall, DegenerateInput, EigensolverError, DegenerateEvolution,
            np.linalg.LinAlgError) as err:
        log.info("search aborted (seed %s): %s", seed, err)
        return OrbitRecord(A, cfg.n_periods, float("nan"), J if J is not None else float("nan"),
                           chi, False, "canonicalization_stall", seed=seed, iterations=total,
                           params=params, history=history if keep_history else [])
    converged = F >= 1 - CONVERGED_INFIDELITY
    return OrbitRecord(A, cfg.n_periods, float(F), J if J is not None else float("nan"), chi,
                       converged, reason, seed=seed, iterations=total, params=params,
                       history=history if keep_history else [], polished=polished)


def find_orbit(seed: int, chi: int, schedule: HamiltonianSchedule | KickedIsingParams,
               cfg: SearchConfig, d: int = 2, keep_history: bool = False) -> OrbitRecord:
    """Search for a periodic orbit from the random tensor of ``seed``."""
    params = None
    J = float("nan")
    if isinstance(schedule, KickedIsingParams):
        params = schedule.to_dict()
        J = schedule.J
        schedule = kicked_ising(schedule)
    A0 = normalize(random_tensor(chi, d, seed))
    return refine(A0, schedule, cfg, chi=chi, seed=seed, J=J, params=params,
                  keep_history=keep_history)


def continue_orbit(record: OrbitRecord, J_new: float, cfg: SearchConfig,
                   keep_history: bool = False) -> OrbitRecord:
    """Warm-start the search at ``J_new`` (with ``g = J_new``) from a converged record."""
    params = record.kicked_params.with_J(J_new)
    single = replace(cfg, n_periods=record.n_periods, two_stage_min_chi=10**9)
    out = refine(record.A_L0, kicked_ising(params), single, chi=record.chi, seed=record.seed,
                 J=J_new, params=params.to_dict(), keep_history=keep_history)
    if out.converged:
        out.inversion_symmetric = is_inversion_symmetric(out.A_L0)
    return out


def is_inversion_symmetric(A_L) -> bool:
    A = as_array(A_L)
    return fidelity_density(A, spatial_inversion(A)) > DUPLICATE_FIDELITY


def postprocess(records: list[OrbitRecord]) -> list[OrbitRecord]:
    """Unique injective converged orbits, best representative first-seen order.

    Duplicates are the connected components of the graph whose edges join
    records with fidelity density above ``1 - 1e-5``.
    """
    kept = [r for r in records if r.converged and second_tm_eigenvalue(r.A_L0) <= INJECTIVITY_LIMIT]
    dropped = sum(r.converged for r in records) - len(kept)
    if dropped:
        log.info("dropped %d converged records with near-degenerate transfer spectrum", dropped)
    parent = list(range(len(kept)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            if find(i) == find(j):
                continue
            if fidelity_density(kept[i].A_L0, kept[j].A_L0) > DUPLICATE_FIDELITY:
                parent[find(j)] = find(i)
    clusters: dict[int, list[OrbitRecord]] = {}
    for i, r in enumerate(kept):
        clusters.setdefault(find(i), []).append(r)
    out = []
    for members in clusters.values():
        best = max(members, key=lambda r: r.fidelity)
        best.inversion_symmetric = is_inversion_symmetric(best.A_L0)
        out.append(best)
    return out


def cluster_labels(records: list[OrbitRecord], uniques: list[OrbitRecord]) -> list[int | None]:
    """Index into ``uniques`` of the orbit each record belongs to (None if unmatched)."""
    labels = []
    for r in records:
        label = None
        if r.converged:
            for k, u in enumerate(uniques):
                if fidelity_density(r.A_L0, u.A_L0) > DUPLICATE_FIDELITY:
                    label = k
                    break
        labels.append(label)
    return labels
