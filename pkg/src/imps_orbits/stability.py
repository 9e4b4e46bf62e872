"""Linear stability of periodic orbits and long-time tracking of perturbed trajectories.

The one-period Jacobian is built column by column: the orbit tensor is
displaced along a tangent direction, propagated, and the image is expressed
again in tangent coordinates at the starting point by maximizing the fidelity
density of a trial tensor ``normalize(A_L + sum_j beta_j V_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .imps import fidelity_density, mixed_canonical, expectation, normalize, as_array
from .model import PAULI
from .search import OrbitRecord, SearchConfig
from .tangent import fit_coordinates, tangent_basis
from .tdvp import propagate_tensor

log = logging.getLogger(__name__)

STABLE_EXPONENT = 1e-3
FIT_RESIDUAL_LIMIT = 1e-8


@dataclass
class JacobianResult:
    matrix: np.ndarray
    fit_residuals: np.ndarray
    period: float

    @property
    def reliable(self) -> bool:
        return bool(np.all(self.fit_residuals <= FIT_RESIDUAL_LIMIT))


@dataclass
class FloquetSpectrum:
    multipliers: np.ndarray
    exponent: float
    symplectic_defect: float
    period: float = 1.0

    @property
    def stable(self) -> bool:
        return self.exponent <= STABLE_EXPONENT

    def phases(self, tol: float = 1e-2) -> np.ndarray:
        """Distinct ``|arg Lambda|`` of the multipliers lying on the unit circle."""
        on = self.multipliers[np.abs(np.abs(self.multipliers) - 1) <= tol]
        return np.sort(np.abs(np.angle(on)))

    def to_json(self) -> dict:
        return {
            "multipliers_re": self.multipliers.real.tolist(),
            "multipliers_im": self.multipliers.imag.tolist(),
            "exponent": self.exponent,
            "symplectic_defect": self.symplectic_defect,
            "period": self.period,
        }


@dataclass
class StroboscopicSeries:
    """Values at times ``n T`` for ``n = 1..N``."""

    distance: np.ndarray
    observables: dict = field(default_factory=dict)
    perturbation_size: float = 0.0
    period: float = 1.0
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.distance)


def jacobian(orbit: OrbitRecord, delta: float = 1e-3, cfg: SearchConfig | None = None,
             central: bool = False) -> JacobianResult:
    """Real ``2(d-1)chi^2`` square Jacobian of the stroboscopic map at the orbit.

    Column ``i`` is ``beta / delta`` for a displacement ``delta`` along basis
    direction ``i`` (or the central difference of ``+-delta`` when ``central``).
    """
    cfg = cfg or SearchConfig.fast()
    A0 = as_array(orbit.A_L0)
    basis = tangent_basis(A0)
    schedule = orbit.schedule
    tcfg = cfg.tdvp()
    n = basis.dim
    J = np.zeros((n, n))
    resid = np.zeros(n)
    zero = np.zeros(n)

    def image(sign, i):
        A = normalize(A0 + sign * delta * basis.direction(i))
        At = propagate_tensor(A, schedule, orbit.n_periods, tcfg)
        return fit_coordinates(At, basis, zero)

    for i in range(n):
        bp, rp = image(+1, i)
        if central:
            bm, rm = image(-1, i)
            J[:, i] = (bp - bm) / (2 * delta)
            resid[i] = max(rp, rm)
        else:
            J[:, i] = bp / delta
            resid[i] = rp
        if resid[i] > FIT_RESIDUAL_LIMIT:
            log.warning("jacobian column %d: fit residual %.2e", i, resid[i])
    period = orbit.n_periods * schedule.total_period
    return JacobianResult(J, resid, period)


def floquet_spectrum(jac, period: float | None = None) -> FloquetSpectrum:
    """Multipliers (eigenvalues), exponent ``ln max|Lambda| / T`` and volume defect."""
    if isinstance(jac, JacobianResult):
        period = jac.period if period is None else period
        jac = jac.matrix
    period = 1.0 if period is None else period
    mult = np.linalg.eigvals(np.asarray(jac, dtype=float))
    order = np.argsort(-np.abs(mult), kind="stable")
    mult = mult[order]
    lam = max(math.log(float(np.max(np.abs(mult)))) / period, 0.0)
    defect = abs(float(np.prod(np.abs(mult))) - 1.0)
    return FloquetSpectrum(mult, lam, defect, period)


def _observable(name: str) -> np.ndarray:
    ops = [PAULI[c] for c in name.lower()]
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def perturb_and_track(orbit: OrbitRecord, perturbation: float, n_periods: int,
                      observables=("x", "y", "z"), cfg: SearchConfig | None = None,
                      seed: int = 0) -> StroboscopicSeries:
    """Follow the orbit and a randomly displaced copy for ``n_periods`` periods.

    ``observables`` are Pauli strings on one or two sites (``"x"``, ``"xy"``)
    evaluated on the perturbed trajectory.
    """
    cfg = cfg or SearchConfig.fast()
    tcfg = cfg.tdvp()
    schedule = orbit.schedule
    A0 = as_array(orbit.A_L0)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(A0.shape) + 1j * rng.standard_normal(A0.shape)
    Ap = normalize(A0 + perturbation * X / np.linalg.norm(X)) if perturbation else A0.copy()
    ops = {name: _observable(name) for name in observables}
    dist, obs = [], {name: [] for name in observables}
    A = A0
    truncated = False
    for _ in range(n_periods):
        try:
            A = propagate_tensor(A, schedule, orbit.n_periods, tcfg)
            Ap = propagate_tensor(Ap, schedule, orbit.n_periods, tcfg)
            state = mixed_canonical(Ap)
        except (RuntimeError, np.linalg.LinAlgError) as err:
            log.warning("tracking stopped after %d periods: %s", len(dist), err)
            truncated = True
            break
        dist.append(1.0 - fidelity_density(A, Ap))
        for name, op in ops.items():
            obs[name].append(expectation(state, op).real)
    return StroboscopicSeries(np.array(dist), {k: np.array(v) for k, v in obs.items()},
                              perturbation, orbit.n_periods * schedule.total_period, truncated)


def growth_rate(series: StroboscopicSeries, lower: float | None = None,
                upper: float = 0.1) -> float:
    """Exponential growth rate of the displacement ``sqrt(1 - D)`` per unit time.

    Fitted between the first crossing of ``lower`` (default ten times the
    perturbation size) and the first crossing of ``upper``.
    """
    lower = 10 * series.perturbation_size if lower is None else lower
    disp = np.sqrt(np.clip(series.distance, 0.0, None))
    n = np.arange(1, len(disp) + 1)
    start = np.flatnonzero(disp >= lower)
    if start.size == 0:
        return 0.0
    stop = np.flatnonzero(disp >= upper)
    i0 = start[0]
    i1 = stop[0] if stop.size else len(disp)
    if i1 - i0 < 2:
        raise ValueError("exponential window too short for a fit")
    slope = np.polyfit(n[i0:i1], np.log(disp[i0:i1]), 1)[0]
    return float(slope / series.period)


def fourier_peaks(series, threshold: float = 0.1, key: str | None = None) -> list[float]:
    """Angular frequencies in ``[0, pi]`` of spectral peaks above ``threshold * max``.

    The mean is removed first; local maxima closer than one frequency bin are
    merged.
    """
    if isinstance(series, StroboscopicSeries):
        key = key or next(iter(series.observables))
        x = np.asarray(series.observables[key], dtype=float)
    else:
        x = np.asarray(series, dtype=float)
    x = x - x.mean()
    amp = np.abs(np.fft.rfft(x))
    if amp.size < 2 or amp[1:].max() <= 1e-12 * max(1.0, np.abs(x).max(initial=0.0) * len(x)):
        return []
    amp[0] = 0.0
    omega = 2 * np.pi * np.arange(amp.size) / len(x)
    cut = threshold * amp.max()
    peaks = [omega[m] for m in range(1, amp.size)
             if amp[m] >= cut and amp[m] >= amp[m - 1]
             and (m + 1 == amp.size or amp[m] >= amp[m + 1])]
    merged: list[float] = []
    step = 2 * np.pi / len(x)
    for w in peaks:
        if merged and w - merged[-1] <= step + 1e-12:
            continue
        merged.append(float(w))
    return merged


def match_peaks(peaks, phases, n_samples: int, bins: float = 2.0) -> tuple[int, list]:
    """Count peaks within ``bins`` frequency bins of some multiplier phase."""
    tol = bins * 2 * np.pi / n_samples
    phases = np.asarray(phases)
    matched = []
    for w in peaks:
        if phases.size and np.min(np.abs(phases - w)) <= tol:
            matched.append(w)
    return len(matched), matched
