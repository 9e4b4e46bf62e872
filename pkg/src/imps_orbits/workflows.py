"""End-to-end jobs built from the library modules.

Each function returns plain rows or dicts so that the command-line front
end only has to serialize them, and the same jobs can be driven from tests.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import logging
import math
from typing import Callable, Iterable

import numpy as np

from . import ed
from .imps import as_array, entanglement_entropy, expectation, mixed_canonical
from .model import PAULI, KickedIsingParams, ScheduleSegment, kicked_ising
from .search import (OrbitRecord, SearchConfig, cluster_labels, continue_orbit, find_orbit,
                     postprocess)
from .stability import (floquet_spectrum, fourier_peaks, jacobian, match_peaks,
                        perturb_and_track)
from .tdvp import TdvpConfig, evolve_segment

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- campaigns

def _search_task(args):
    seed, chi, params, cfg = args
    try:
        return find_orbit(seed, chi, KickedIsingParams.from_dict(params), cfg).to_json()
    except Exception as err:  # recorded per seed, the campaign goes on
        log.warning("seed %d failed: %s", seed, err)
        return {"seed": seed, "error": f"{type(err).__name__}: {err}"}


def run_campaign(params: KickedIsingParams, chi: int, seeds: Iterable[int], cfg: SearchConfig,
                 workers: int = 1, on_result: Callable[[dict], None] | None = None) -> list[dict]:
    """Search from every seed; ``on_result`` receives each JSON record as it completes."""
    tasks = [(s, chi, params.to_dict(), cfg) for s in seeds]
    out = []
    if workers <= 1:
        results = map(_search_task, tasks)
        for rec in results:
            out.append(rec)
            if on_result:
                on_result(rec)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_search_task, tasks):
                out.append(rec)
                if on_result:
                    on_result(rec)
    return out


def campaign_summary(records: list[dict]) -> dict:
    """Success rate, unique orbits and cluster labels of a list of JSON records."""
    records = sorted(records, key=lambda r: r["seed"])
    valid = [OrbitRecord.from_json(r) for r in records if "error" not in r]
    uniques = postprocess(valid)
    labels = cluster_labels(valid, uniques)
    n = len(records)
    return {
        "n_seeds": n,
        "n_failed": n - len(valid),
        "n_converged": sum(r.converged for r in valid),
        "success_rate": sum(r.converged for r in valid) / n if n else 0.0,
        "unique_seeds": [u.seed for u in uniques],
        "inversion_symmetric": [bool(u.inversion_symmetric) for u in uniques],
        "cluster_of_seed": {str(r.seed): lab for r, lab in zip(valid, labels)},
    }


def unique_orbits(records: list[dict]) -> list[OrbitRecord]:
    valid = [OrbitRecord.from_json(r) for r in sorted(records, key=lambda r: r["seed"])
             if "error" not in r]
    return postprocess(valid)


# ---------------------------------------------------------------- orbit observables

def _segment_snapshots(schedule, substeps: int):
    """``(segment, fraction)`` pieces that split every segment into ``substeps`` parts."""
    for seg in schedule.segments:
        piece = ScheduleSegment(seg.duration / substeps, seg.two_site, seg.single_site_only)
        for _ in range(substeps):
            yield piece


def orbit_trajectory(record: OrbitRecord, cfg: TdvpConfig, substeps: int = 10) -> list[dict]:
    """Local magnetizations and half-chain entropy along one period of the orbit."""
    A = as_array(record.A_L0)
    schedule = record.schedule
    rows = []
    t = 0.0

    def row(A, t):
        st = mixed_canonical(A)
        out = {"t": t, "S": entanglement_entropy(st)}
        for k in "xyz":
            out[k] = float(expectation(st, PAULI[k]).real)
        return out

    rows.append(row(A, t))
    for _ in range(record.n_periods):
        for piece in _segment_snapshots(schedule, substeps):
            A = evolve_segment(A, piece, cfg)
            t += piece.duration
            rows.append(row(A, t))
    return rows


def tdvp_entropy_series(A, params: KickedIsingParams, cfg: TdvpConfig, n_periods: int = 1,
                        substeps: int = 1) -> np.ndarray:
    A = as_array(A)
    out = [entanglement_entropy(mixed_canonical(A))]
    for _ in range(n_periods):
        for piece in _segment_snapshots(kicked_ising(params), substeps):
            A = evolve_segment(A, piece, cfg)
            out.append(entanglement_entropy(mixed_canonical(A)))
    return np.array(out)


def compare_exact(A_L, params: KickedIsingParams, L: int, cfg: TdvpConfig,
                  n_periods: int = 1, substeps: int = 1) -> dict:
    """Entanglement of exact ring evolution against TDVP from the same state.

    The ring is cut into two halves, which crosses two bonds, so half of the
    ring entropy is compared with the single-cut entropy of the infinite
    chain.  ``delta_S`` is the excess entanglement accumulated by the exact
    dynamics at the final time, with each series measured relative to its
    initial value.
    """
    v = ed.mps_to_statevector(A_L, L)
    exact = ed.exact_evolve(v, params, n_periods, substeps)
    s_exact = exact.entropy / 2
    s_tdvp = tdvp_entropy_series(A_L, params, cfg, n_periods, substeps)
    delta = (s_exact[-1] - s_exact[0]) - (s_tdvp[-1] - s_tdvp[0])
    return {
        "L": L,
        "times": exact.times.tolist(),
        "S_exact": s_exact.tolist(),
        "S_tdvp": s_tdvp.tolist(),
        "delta_S": float(delta),
        "initial_offset": float(s_exact[0] - s_tdvp[0]),
    }


def ring_magnetization(A_L, L: int) -> dict:
    """One-site Pauli expectations of the finite-ring state built from ``A_L``."""
    v = ed.mps_to_statevector(A_L, L)
    t = v.reshape(2, -1)
    out = {}
    for k in "xyz":
        out[k] = float(np.vdot(t, PAULI[k] @ t).real)
    return out


# ---------------------------------------------------------------- stability jobs

def stability_report(record: OrbitRecord, cfg: SearchConfig, delta: float = 1e-4,
                     central: bool = True) -> dict:
    """Floquet spectrum of the orbit; central differences keep the volume defect near 1e-8."""
    jac = jacobian(record, delta, cfg, central=central)
    spec = floquet_spectrum(jac)
    out = spec.to_json()
    out.update({"stable": spec.stable, "fit_residual_max": float(jac.fit_residuals.max()),
                "reliable": jac.reliable})
    return out


def torus_report(record: OrbitRecord, delta: float, periods: int, cfg: SearchConfig,
                 observables=("x",), threshold: float = 0.1, seed: int = 0,
                 spectrum: dict | None = None) -> dict:
    """Perturbed-orbit tracking with Fourier peaks matched to multiplier phases."""
    if spectrum is None:
        spectrum = stability_report(record, cfg)
    mult = np.array(spectrum["multipliers_re"]) + 1j * np.array(spectrum["multipliers_im"])
    on = mult[np.abs(np.abs(mult) - 1) <= 1e-2]
    phases = np.unique(np.round(np.abs(np.angle(on)), 10))
    series = perturb_and_track(record, delta, periods, observables, cfg, seed)
    peaks = {}
    total = []
    for name in observables:
        p = fourier_peaks(series, threshold, name)
        peaks[name] = p
        total.extend(p)
    merged = fourier_peaks_union(total, 2 * np.pi / max(len(series), 1))
    n_match, matched = match_peaks(merged, phases, len(series))
    return {
        "distance": series.distance.tolist(),
        "observables": {k: v.tolist() for k, v in series.observables.items()},
        "truncated": series.truncated,
        "max_distance": float(series.distance.max()) if len(series) else 0.0,
        "peaks": peaks,
        "merged_peaks": merged,
        "multiplier_phases": phases.tolist(),
        "n_matched": n_match,
        "matched": matched,
        "spectrum": spectrum,
    }


def fourier_peaks_union(peaks: list[float], bin_width: float) -> list[float]:
    """Merge peak lists from several observables, collapsing peaks within one bin."""
    out: list[float] = []
    for w in sorted(peaks):
        if out and w - out[-1] <= bin_width + 1e-12:
            continue
        out.append(float(w))
    return out


def sweep(record: OrbitRecord, J_values, cfg: SearchConfig, stability: bool = True,
          exact_L: int = 0, on_step: Callable[[dict, OrbitRecord], None] | None = None) -> list[dict]:
    """Continue an orbit along ``J_values`` (with ``g = J``), warm-starting each step.

    The continuation stops at the first step that fails to converge.
    """
    rows = []
    current = record
    for J in J_values:
        rec = continue_orbit(current, float(J), cfg)
        row = {"J": float(J), "converged": rec.converged, "fidelity": rec.fidelity,
               "halted_reason": rec.halted_reason}
        if rec.converged:
            st = mixed_canonical(rec.A_L0)
            row["S_ent"] = entanglement_entropy(st)
            for k in "xyz":
                row[k] = float(expectation(st, PAULI[k]).real)
            if stability:
                spec = stability_report(rec, cfg)
                row.update(exponent=spec["exponent"], symplectic_defect=spec["symplectic_defect"],
                           multipliers_re=spec["multipliers_re"],
                           multipliers_im=spec["multipliers_im"])
            if exact_L:
                row["delta_S"] = compare_exact(rec.A_L0, rec.kicked_params, exact_L,
                                               cfg.tdvp())["delta_S"]
        rows.append(row)
        if on_step:
            on_step(row, rec)
        if not rec.converged:
            log.warning("continuation failed at J=%.4f", J)
            break
        current = rec
    return rows


def j_grid(J_from: float, J_to: float, step: float) -> np.ndarray:
    """Points from ``J_from`` to ``J_to`` inclusive with spacing at most ``step``."""
    n = max(1, math.ceil(abs(J_to - J_from) / step - 1e-9))
    return np.linspace(J_from, J_to, n + 1)


# ---------------------------------------------------------------- finite-ring oracle jobs

def ipr_scan(A_L, params: KickedIsingParams, L_values, parity: int | None = 1) -> list[dict]:
    rows = []
    for L in L_values:
        sector = ed.sector_basis(L, 0, parity)
        res = ed.ipr(A_L, params, L, sector, return_details=True)
        rows.append({"L": L, "ipr": res.ipr, "projection_weight": res.projection_weight,
                     "degenerate": res.degenerate, "sector_dim": res.dim,
                     "parity": parity})
    return rows


def ipr_slope(rows: list[dict]) -> float:
    L = np.array([r["L"] for r in rows], dtype=float)
    y = np.log([r["ipr"] for r in rows])
    return float(np.polyfit(L, y, 1)[0])


def heff_overlap(A_L, params: KickedIsingParams, L: int) -> dict:
    e, w = ed.orbit_eigenstate_overlaps(A_L, params, L)
    k = int(np.argmax(w))
    return {"energies": e.tolist(), "overlaps": w.tolist(), "argmax": k,
            "max_overlap": float(w[k]), "n_states": len(e)}


def eth_scan(params: KickedIsingParams, L: int, observable: str = "x", parity: int | None = 1):
    e, vals = ed.floquet_eth_scan(params, L, observable, 0, parity)
    order = np.argsort(e)
    return [{"quasienergy": float(e[i]), "value": float(vals[i])} for i in order]


def smoothed_profile_variance(rows: list[dict], window: int = 51) -> float:
    """Variance of the running mean of an ETH scan ordered by quasienergy."""
    v = np.array([r["value"] for r in rows])
    window = max(1, min(window, len(v)))
    smooth = np.convolve(v, np.ones(window) / window, mode="valid")
    return float(np.var(smooth))


def ground_state_orbit(records: list[OrbitRecord], params: KickedIsingParams,
                       L: int = 8) -> tuple[OrbitRecord, OrbitRecord]:
    """Orbits whose ring states have the lowest and highest effective energy.

    Returns ``(ground, ceiling)``; the energy is the expectation of the
    fourth-order effective Hamiltonian on an ``L``-site ring.
    """
    H = ed.h_eff4(params, L).matrix
    energies = []
    for r in records:
        v = ed.mps_to_statevector(r.A_L0, L)
        energies.append(float(np.vdot(v, H @ v).real))
    order = np.argsort(energies)
    return records[order[0]], records[order[-1]]


__all__ = [
    "run_campaign", "campaign_summary", "unique_orbits", "orbit_trajectory", "compare_exact",
    "tdvp_entropy_series", "ring_magnetization", "stability_report", "torus_report", "sweep",
    "j_grid", "ipr_scan", "ipr_slope", "heff_overlap", "eth_scan", "smoothed_profile_variance",
    "ground_state_orbit", "fourier_peaks_union",
]
