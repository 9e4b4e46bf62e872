"""Command-line front end.

Every run is described by a :class:`RunManifest`, written next to its
outputs together with a content hash.  JSON outputs carry the hash at the
top level (timestamps live only in a ``metadata`` block) and CSV outputs
carry it in a leading ``manifest_hash`` column, so each file can be traced
back to the run that produced it.
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass, field
import datetime as _dt
import hashlib
import json
import logging
import os
from pathlib import Path
import sys

from .imps import MpsTensor, entanglement_entropy, expectation, mixed_canonical
from .model import PAULI, KickedIsingParams
from .search import OrbitRecord, SearchConfig
from .tdvp import TdvpConfig
from . import workflows as wf

log = logging.getLogger("imps_orbits")

COMMANDS = ("search", "stability", "sweep", "torus", "ipr", "compare-exact", "eth-scan",
            "heff-overlap")


@dataclass
class RunManifest:
    """Complete, serializable description of one run."""

    command: str
    params: KickedIsingParams
    chi: int | None = None
    seeds: tuple[int, int] | None = None
    search: SearchConfig = field(default_factory=SearchConfig.fast)
    tdvp: TdvpConfig | None = None
    output_dir: str = "."
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.seeds is not None:
            a, b = self.seeds
            if b < a:
                raise ValueError("empty seed range")
            self.seeds = (int(a), int(b))
        if self.tdvp is None:
            self.tdvp = self.search.tdvp()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params.to_dict(),
            "chi": self.chi,
            "seeds": list(self.seeds) if self.seeds is not None else None,
            "search": self.search.to_dict(),
            "tdvp": self.tdvp.to_dict(),
            "output_dir": self.output_dir,
            "options": self.options,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            command=d["command"],
            params=KickedIsingParams.from_dict(d["params"]),
            chi=d.get("chi"),
            seeds=tuple(d["seeds"]) if d.get("seeds") is not None else None,
            search=SearchConfig.from_dict(d["search"]),
            tdvp=TdvpConfig.from_dict(d["tdvp"]),
            output_dir=d.get("output_dir", "."),
            options=dict(d.get("options", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# ---------------------------------------------------------------- output helpers

def _metadata(manifest: RunManifest) -> dict:
    return {"manifest_hash": manifest.digest(),
            "written": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def write_json(path: Path, manifest: RunManifest, payload: dict):
    doc = {"manifest_hash": manifest.digest(), "payload": payload,
           "metadata": _metadata(manifest)}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def write_csv(path: Path, manifest: RunManifest, rows: list[dict]):
    if not rows:
        path.write_text("manifest_hash\n", encoding="utf-8")
        return
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys.extend(k for k in r if k not in keys)
    digest = manifest.digest()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["manifest_hash"] + keys, lineterminator="\r\n")
        writer.writeheader()
        for r in rows:
            flat = {k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()}
            writer.writerow({"manifest_hash": digest, **flat})


def load_orbit(path: str | os.PathLike, params: KickedIsingParams | None = None) -> OrbitRecord:
    """Read an orbit from an MpsTensor JSON, an OrbitRecord JSON, or a JSON output document."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "payload" in obj:
        obj = obj["payload"]
    if "orbit" in obj:
        obj = obj["orbit"]
    if "A_L0" in obj:
        rec = OrbitRecord.from_json(obj)
        if params is not None:
            rec.params = params.to_dict()
            rec.J = params.J
        return rec
    A = MpsTensor.from_json(obj).data
    p = params or KickedIsingParams(1.09)
    return OrbitRecord(A, 1, float("nan"), p.J, A.shape[0], False, "target_met",
                       params=p.to_dict())


def _parse_seeds(text: str) -> tuple[int, int]:
    """``"A..B"`` inclusive, or a single seed."""
    if ".." in text:
        a, b = text.split("..", 1)
        return int(a), int(b)
    return int(text), int(text)


# ---------------------------------------------------------------- commands

def cmd_search(m: RunManifest, out: Path, workers: int) -> int:
    partial = out / "records.jsonl"
    done: dict[int, dict] = {}
    digest = m.digest()
    if partial.exists():
        lines = partial.read_text(encoding="utf-8").splitlines()
        if lines and json.loads(lines[0]).get("manifest_hash") == digest:
            for line in lines[1:]:
                rec = json.loads(line)
                done[rec["seed"]] = rec
            log.info("resuming: %d seeds already complete", len(done))
    if not done:
        partial.write_text(json.dumps({"manifest_hash": digest}) + "\n", encoding="utf-8")
    a, b = m.seeds
    todo = [s for s in range(a, b + 1) if s not in done]

    def sink(rec):
        with partial.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
        done[rec["seed"]] = rec
        status = "error" if "error" in rec else ("converged" if rec["converged"] else rec["halted_reason"])
        log.info("seed %d: %s", rec["seed"], status)

    wf.run_campaign(m.params, m.chi, todo, m.search, workers, sink)
    records = [done[s] for s in sorted(done)]
    summary = wf.campaign_summary(records)
    write_json(out / "campaign.json", m, {"config": m.to_dict(), "records": records,
                                          "summary": summary})
    uniques = wf.unique_orbits(records)
    rows = []
    for u in uniques:
        st = mixed_canonical(u.A_L0)
        rows.append({"seed": u.seed, "fidelity": u.fidelity,
                     "inversion_symmetric": u.inversion_symmetric,
                     "S_ent": entanglement_entropy(st),
                     **{k: float(expectation(st, PAULI[k]).real) for k in "xyz"}})
        (out / f"orbit_seed{u.seed}.json").write_text(json.dumps(u.to_json(), indent=1),
                                                      encoding="utf-8")
        traj = wf.orbit_trajectory(u, m.tdvp, m.options.get("substeps", 10))
        write_csv(out / f"trajectory_seed{u.seed}.csv", m, traj)
    write_csv(out / "orbits.csv", m, rows)
    print(f"{summary['n_converged']}/{summary['n_seeds']} seeds converged, "
          f"{len(uniques)} unique orbits")
    return 0 if uniques else 3


def cmd_stability(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    report = wf.stability_report(rec, m.search, m.options.get("delta", 1e-4))
    write_json(out / "stability.json", m, report)
    print(f"exponent {report['exponent']:.4g}  defect {report['symplectic_defect']:.2g}  "
          f"{'stable' if report['stable'] else 'unstable'}")
    return 0


def cmd_sweep(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    o = m.options
    grid = wf.j_grid(o["J_from"], o["J_to"], o["J_step"])
    records = out / "sweep_records.jsonl"
    records.write_text("", encoding="utf-8")

    def on_step(row, r):
        with records.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(r.to_json()) + "\n")
        log.info("J=%.4f converged=%s lambda=%s", row["J"], row["converged"], row.get("exponent"))

    rows = wf.sweep(rec, grid, m.search, not o.get("no_stability", False), o.get("exact_L", 0),
                    on_step)
    write_csv(out / "sweep.csv", m, rows)
    onset = next((r["J"] for r in rows if r.get("exponent", 0.0) > 1e-3), None)
    write_json(out / "sweep.json", m, {"rows": rows, "instability_onset": onset})
    print(f"{sum(r['converged'] for r in rows)}/{len(grid)} steps converged; onset {onset}")
    return 0 if all(r["converged"] for r in rows) and len(rows) == len(grid) else 4


def cmd_torus(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    o = m.options
    report = wf.torus_report(rec, o["delta"], o["periods"], m.search,
                             tuple(o.get("observables", ["x"])), o.get("threshold", 0.1))
    n = len(report["distance"])
    rows = [{"n": i + 1, "distance": report["distance"][i],
             **{k: v[i] for k, v in report["observables"].items()}} for i in range(n)]
    write_csv(out / "torus_series.csv", m, rows)
    write_json(out / "torus.json", m, {k: v for k, v in report.items()
                                       if k not in ("distance", "observables")})
    print(f"{len(report['merged_peaks'])} peaks, {report['n_matched']} matched to multipliers")
    return 0


def cmd_ipr(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    o = m.options
    rows = wf.ipr_scan(rec.A_L0, rec.kicked_params, range(o["L_from"], o["L_to"] + 1),
                       o.get("parity"))
    write_csv(out / "ipr.csv", m, rows)
    if len(rows) > 1:
        print(f"ln IPR slope {wf.ipr_slope(rows):.4f}")
    return 0


def cmd_compare_exact(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    o = m.options
    res = wf.compare_exact(rec.A_L0, rec.kicked_params, o["L"], m.tdvp, o.get("periods", 1),
                           o.get("substeps", 10))
    rows = [{"t": t, "S_exact": a, "S_tdvp": b}
            for t, a, b in zip(res["times"], res["S_exact"], res["S_tdvp"])]
    write_csv(out / "compare_exact.csv", m, rows)
    write_json(out / "compare_exact.json", m, {"delta_S": res["delta_S"],
                                               "initial_offset": res["initial_offset"],
                                               "L": res["L"]})
    print(f"delta S_ent = {res['delta_S']:.4f}")
    return 0


def cmd_eth_scan(m: RunManifest, out: Path, workers: int) -> int:
    o = m.options
    rows = wf.eth_scan(m.params, o["L"], o.get("observable", "x"), o.get("parity", 1))
    write_csv(out / "eth_scan.csv", m, rows)
    print(f"{len(rows)} eigenstates")
    return 0


def cmd_heff_overlap(m: RunManifest, out: Path, workers: int) -> int:
    rec = load_orbit(m.options["orbit"], m.params)
    res = wf.heff_overlap(rec.A_L0, rec.kicked_params, m.options["L"])
    rows = [{"energy": e, "overlap": w} for e, w in zip(res["energies"], res["overlaps"])]
    write_csv(out / "heff_overlap.csv", m, rows)
    print(f"max overlap {res['max_overlap']:.4f} with eigenstate {res['argmax']} "
          f"of {res['n_states']}")
    return 0


HANDLERS = {
    "search": cmd_search, "stability": cmd_stability, "sweep": cmd_sweep, "torus": cmd_torus,
    "ipr": cmd_ipr, "compare-exact": cmd_compare_exact, "eth-scan": cmd_eth_scan,
    "heff-overlap": cmd_heff_overlap,
}


def run(manifest: RunManifest, workers: int = 1) -> int:
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps({"manifest": manifest.to_dict(), "manifest_hash": manifest.digest()},
                   indent=1, sort_keys=True), encoding="utf-8")
    return HANDLERS[manifest.command](manifest, out, workers)


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imps-orbits", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, orbit=False, model=False):
        sp.add_argument("--config", help="JSON file with params/search/tdvp/options sections")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--preset", choices=("fast", "reference"), default=None,
                        help="fast: Runge-Kutta with exact on-site kicks; "
                             "reference: split-step integrator at the default steps")
        sp.add_argument("--dt-fine", type=float, default=None)
        sp.add_argument("--dt-coarse", type=float, default=None)
        sp.add_argument("--n-periods", type=int, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
        for name in ("J", "g", "h", "T"):
            sp.add_argument(f"--{name}", type=float, default=None,
                            required=model and name == "J")
        if orbit:
            sp.add_argument("--orbit", required=True, help="orbit or MpsTensor JSON file")

    sp = sub.add_parser("search", help="seeded orbit search campaign")
    common(sp)
    sp.add_argument("--chi", type=int, required=True)
    sp.add_argument("--seeds", type=_parse_seeds, required=True, help="A..B inclusive")
    sp.add_argument("--substeps", type=int, default=None)

    sp = sub.add_parser("stability", help="Jacobian and Floquet multipliers of an orbit")
    common(sp, orbit=True)
    sp.add_argument("--delta", type=float, default=None)

    sp = sub.add_parser("sweep", help="continue an orbit in J")
    common(sp, orbit=True)
    sp.add_argument("--J-from", dest="J_from", type=float, required=True)
    sp.add_argument("--J-to", dest="J_to", type=float, required=True)
    sp.add_argument("--J-step", dest="J_step", type=float, required=True)
    sp.add_argument("--exact-L", dest="exact_L", type=int, default=None,
                    help="also compare entanglement with an exact ring of this size")
    sp.add_argument("--no-stability", dest="no_stability", action="store_true", default=None)

    sp = sub.add_parser("torus", help="track a perturbed orbit and extract Fourier peaks")
    common(sp, orbit=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--periods", type=int, required=True)
    sp.add_argument("--observables", nargs="+", default=None)
    sp.add_argument("--threshold", type=float, default=None)

    sp = sub.add_parser("ipr", help="inverse participation ratio over ring sizes")
    common(sp, orbit=True)
    sp.add_argument("--L-from", dest="L_from", type=int, required=True)
    sp.add_argument("--L-to", dest="L_to", type=int, required=True)
    sp.add_argument("--parity", type=int, choices=(1, -1), default=None)

    sp = sub.add_parser("compare-exact", help="entanglement against exact ring evolution")
    common(sp, orbit=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--periods", type=int, default=None)
    sp.add_argument("--substeps", type=int, default=None)

    sp = sub.add_parser("eth-scan", help="Floquet eigenstate expectation values")
    common(sp, model=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--observable", choices=("x", "y", "z"), default=None)
    sp.add_argument("--parity", type=int, choices=(1, -1), default=None)

    sp = sub.add_parser("heff-overlap", help="overlaps with effective-Hamiltonian eigenstates")
    common(sp, orbit=True)
    sp.add_argument("--L", type=int, required=True)
    return p


_OPTION_KEYS = ("orbit", "delta", "J_from", "J_to", "J_step", "exact_L", "no_stability",
                "periods", "observables", "threshold", "L_from", "L_to", "parity", "L",
                "observable", "substeps")


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    """Merge defaults, the config file and command-line flags (flags win)."""
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(cfg) - {"params", "search", "tdvp", "options"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")

    params = dict(cfg.get("params", {}))
    for name in ("J", "g", "h", "T"):
        if getattr(args, name, None) is not None:
            params[name] = getattr(args, name)
    if "J" not in params:
        params["J"] = 1.09
    kp = KickedIsingParams.from_dict(params)

    search = dict(cfg.get("search", {}))
    preset = args.preset or search.pop("preset", "fast")
    for flag, key in (("dt_fine", "dt_fine"), ("dt_coarse", "dt_coarse"),
                      ("n_periods", "n_periods"), ("max_iter", "max_iter")):
        if getattr(args, flag, None) is not None:
            search[key] = getattr(args, flag)
    sc = SearchConfig.fast(**search) if preset == "fast" else SearchConfig(**search)
    tdvp = TdvpConfig.from_dict({**sc.tdvp().to_dict(), **cfg.get("tdvp", {})})

    options = dict(cfg.get("options", {}))
    for key in _OPTION_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            options[key] = list(val) if isinstance(val, (list, tuple)) else val
    if "orbit" in options:
        options["orbit"] = str(Path(options["orbit"]).resolve())

    chi = getattr(args, "chi", None)
    seeds = getattr(args, "seeds", None)
    out = args.out or f"runs/{args.command}"
    return RunManifest(args.command, kp, chi, seeds, sc, tdvp, str(out), options)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        manifest = manifest_from_args(args)
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 2
    return run(manifest, max(1, args.workers))


if __name__ == "__main__":
    sys.exit(main())
