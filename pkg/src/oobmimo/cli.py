"""Command-line front end.

    oobmimo run <scenario> -o <dir>
    oobmimo sweep <scenario> --param <key> --values <v1,v2,...> -o <dir>

``<scenario>`` is a TOML file or the name of a bundled scenario
(``oobmimo list`` prints them).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, analyze, metrics
from .pipeline import SimulationResult, StageError, simulate
from .scenario import (ScenarioError, ScenarioSpec, load_scenario_file, parse_override_value,
                       scenario_hash, serialize_scenario)

log = logging.getLogger("oobmimo")

EXIT_USAGE = 2
EXIT_SCENARIO = 3
EXIT_STAGE = 4
EXIT_IO = 5


class OutputError(OSError):
    pass


@dataclass
class RunManifest:
    scenario_hash: str
    seed: int
    version: str
    timestamp: str
    files: dict[str, str] = field(default_factory=dict)    # name -> sha256

    def to_json(self) -> str:
        return json.dumps({"scenario_hash": self.scenario_hash, "seed": self.seed,
                           "version": self.version, "timestamp": self.timestamp,
                           "files": self.files}, indent=2, sort_keys=True)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("oobmimo") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def resolve_scenario_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    key = p.name.removesuffix(".toml")
    if key in bundled:
        return bundled[key]
    raise ScenarioError("<scenario>", f"no such file or bundled scenario: {name}")


def load(scenario: str, profile: str | None = "desk", seed: int | None = None,
         overrides: dict | None = None) -> ScenarioSpec:
    overrides = dict(overrides or {})
    if seed is not None:
        overrides["seed"] = seed
    return load_scenario_file(resolve_scenario_path(scenario), overrides, profile)


def prepare_output_dir(path: str | Path) -> Path:
    """Create ``path`` and prove it is writable, before any computation."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out, prefix=".probe-"):
            pass
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc.strerror or exc}") from None
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_peaks_csv(peaks: list[analyze.BeamPeak], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["azimuth_deg", "oob_power_db", "score_db"])
        for p in peaks:
            w.writerow([f"{p.azimuth_deg:.10g}", f"{p.power_db:.10g}", f"{p.score_db:.10g}"])


def write_outputs(result: SimulationResult, out: Path) -> RunManifest:
    spec = result.spec
    q = spec.output.heatmap_quantity
    written = []

    def emit(name, writer, *args):
        path = out / name
        writer(*args, path) if args else writer(path)
        written.append(path)

    emit("points.csv", metrics.write_points_csv, result.report)
    emit("users.csv", metrics.write_users_csv, result.report)
    emit("ecdf.csv", metrics.write_ecdf_csv, result.report)
    emit(f"heatmap_{q}.csv", analyze.write_heatmap_csv, result.heatmap)
    emit(f"heatmap_{q}.pgm", lambda p: analyze.write_heatmap_pgm(
        result.heatmap, p, spec.output.image_min_db, spec.output.image_max_db))
    emit("peaks.csv", write_peaks_csv, result.peaks)
    emit("scenario.toml", lambda p: p.write_text(serialize_scenario(spec), encoding="utf-8"))

    manifest = RunManifest(scenario_hash(spec), spec.seed, __version__,
                           _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                           {p.name: _sha256(p) for p in written})
    (out / "manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest


def run(spec: ScenarioSpec, output_dir: str | Path, threads: int = 1) -> tuple[RunManifest, SimulationResult]:
    out = prepare_output_dir(output_dir)
    log.info("running %s (M=%d, K=%d, %s channel)", spec.name, spec.array.num_antennas,
             spec.num_users, spec.channel.model)
    result = simulate(spec, threads=threads)
    try:
        manifest = write_outputs(result, out)
    except OSError as exc:
        raise OutputError(f"writing results to {out}: {exc}") from None
    return manifest, result


def _summary_row(value: str, result: SimulationResult) -> list[str]:
    obs = result.report.observers()
    mean_aclr = float(np.mean([p.aclr_db for p in obs]))
    max_oob = float(np.max([p.oob_power_db for p in obs]))
    evm = float(np.mean([u.evm for u in result.report.users]))
    return [value, f"{mean_aclr:.10g}", f"{max_oob:.10g}", f"{evm:.10g}"]


def sweep(scenario: str, param: str, values: list[str], output_dir: str | Path,
          profile: str | None = "desk", seed: int | None = None,
          threads: int = 1) -> list[RunManifest]:
    if not values:
        raise ScenarioError(param, "empty value list")
    out = prepare_output_dir(output_dir)
    base = load(scenario, profile, seed)
    parsed = [parse_override_value(base, param, v) for v in values]
    specs = [load(scenario, profile, seed, {param: v}) for v in parsed]
    manifests, rows = [], []
    for text, spec in zip(values, specs):
        m, result = run(spec, out / f"{param}={text.strip()}", threads)
        manifests.append(m)
        rows.append(_summary_row(text.strip(), result))
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "mean_aclr_db", "max_oob_power_db", "evm"])
        w.writerows(rows)
    return manifests


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=("desk", "paper"), default="desk",
                        help="scale profile for keys the scenario leaves unset (default: desk)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads over receive points")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="oobmimo", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="simulate one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("-o", "--output", required=True)

    p_sweep = sub.add_parser("sweep", parents=[common], help="run one scenario per parameter value")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True, help="dotted key, e.g. pa.back_off_db")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("-o", "--output", required=True)

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "list":
        for name in sorted(bundled_scenarios()):
            print(name)
        return 0
    if args.threads < 1:
        print("error: [cli] --threads: must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            spec = load(args.scenario, args.profile, args.seed)
            manifest, result = run(spec, args.output, args.threads)
            for p in result.peaks:
                log.info("peak at %.2f deg, %.2f dB", p.azimuth_deg, p.power_db)
            print(f"wrote {len(manifest.files) + 1} files to {args.output}")
        else:
            values = [v for v in args.values.split(",") if v.strip()]
            manifests = sweep(args.scenario, args.param, values, args.output, args.profile,
                              args.seed, args.threads)
            print(f"wrote {len(manifests)} runs and summary.csv to {args.output}")
    except ScenarioError as exc:
        print(f"error: [scenario] {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OutputError as exc:
        print(f"error: [output] {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
