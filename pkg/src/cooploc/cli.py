"""Command-line front end for batch experiments.

Subcommands: ``simulate`` (Monte Carlo scenario sweeps), ``utias``
(dataset experiments), ``obscheck`` (observability audit of a recorded
run). Exit codes: 0 success, 1 runtime failure, 2 spec error. The
COOPLOC_OUTDIR environment variable overrides any configured output
directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .mrclam import NoiseConfig, build_event_stream, parse_subset, run_dataset, DatasetError
from .obscheck import (
    delta_p_series,
    build_obs_matrix,
    nullspace_residual,
    numerical_unobs_dim,
    standard_unobs_basis,
    transformed_unobs_basis,
)
from .runio import export_metrics, export_runlog, read_estimates, read_jacobians
from .simworld import ScenarioConfig, monte_carlo, run_episode

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_SPEC = 2


class SpecError(ValueError):
    pass


_TOP_KEYS = {"name", "output_dir", "runs", "base_seed", "estimators",
             "configs", "export_runlogs"}
_CONFIG_KEYS = {
    "id", "robot_count", "duration_s", "dt", "circle_radius_m", "period_range_s",
    "sensor_range_m", "meas_rate_hz", "odom_sigma", "bearing_sigma", "range_sigma",
    "comm_success", "dropout_policy", "pair_only", "grid_spacing_m",
    "init_pos_sigma", "init_heading_sigma", "record_jacobians",
}


def _load_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise SpecError(f"spec file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"{path}: {exc}")


def _parse_experiment(path: Path):
    data = _load_toml(path)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SpecError(f"{path}: unknown top-level keys: {sorted(unknown)}")
    estimators = data.get("estimators", ["tsb"])
    if not isinstance(estimators, list) or not estimators:
        raise SpecError(f"{path}: 'estimators' must be a non-empty list")
    runs = data.get("runs", 1)
    if not isinstance(runs, int) or runs < 1:
        raise SpecError(f"{path}: 'runs' must be a positive integer")
    seed = data.get("base_seed", 0)
    raw_configs = data.get("configs")
    if not raw_configs:
        raise SpecError(f"{path}: at least one [[configs]] table is required")
    configs = []
    for idx, raw in enumerate(raw_configs):
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise SpecError(f"{path}: configs[{idx}]: unknown keys: {sorted(unknown)}")
        cid = raw.pop("id", f"config{idx}")
        for tup_key in ("period_range_s", "odom_sigma"):
            if tup_key in raw:
                raw[tup_key] = tuple(raw[tup_key])
        configs.append((cid, raw))
    return {
        "name": data.get("name", path.stem),
        "output_dir": data.get("output_dir", "out"),
        "runs": runs,
        "seed": seed,
        "estimators": [str(e) for e in estimators],
        "configs": configs,
        "export_runlogs": bool(data.get("export_runlogs", False)),
    }


def _outdir(configured) -> Path:
    return Path(os.environ.get("COOPLOC_OUTDIR", configured))


def _write_manifest(outdir: Path, spec_path: Path, spec: dict) -> None:
    digest = hashlib.sha256(spec_path.read_bytes()).hexdigest()
    manifest = {
        "spec_file": str(spec_path),
        "spec_sha256": digest,
        "base_seed": spec["seed"],
        "runs": spec["runs"],
        "estimators": spec["estimators"],
        "configs": [cid for cid, _ in spec["configs"]],
        "version": __version__,
        "rng": "numpy PCG64, SeedSequence(seed, spawn_key=(stream,))",
    }
    outdir.mkdir(parents=True, exist_ok=True)
    tmp = outdir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    os.replace(tmp, outdir / "manifest.json")


def cmd_simulate(args) -> int:
    spec_path = Path(args.spec)
    spec = _parse_experiment(spec_path)
    outdir = _outdir(spec["output_dir"])
    reports = []
    print(f"{'estimator':<10}{'config':<16}{'rmse_pos':>10}{'rmse_ori':>10}"
          f"{'nees_pos':>10}{'nees_ori':>10}")
    for cid, overrides in spec["configs"]:
        for est in spec["estimators"]:
            try:
                cfg = ScenarioConfig(estimator=est, seed=spec["seed"], **overrides)
            except (TypeError, ValueError) as exc:
                raise SpecError(f"config {cid!r} / estimator {est!r}: {exc}")
            rep = monte_carlo(cfg, spec["runs"], config_id=cid)
            reports.append(rep)
            print(f"{est:<10}{cid:<16}"
                  f"{rep.aggregate[('rmse', 'position')]:>10.4f}"
                  f"{rep.aggregate[('rmse', 'orientation')]:>10.4f}"
                  f"{rep.aggregate[('nees', 'position')]:>10.3f}"
                  f"{rep.aggregate[('nees', 'orientation')]:>10.3f}")
            if rep.excluded_runs:
                print(f"  ({rep.excluded_runs} diverged run(s) excluded)", file=sys.stderr)
            if spec["export_runlogs"]:
                log = run_episode(cfg)
                export_runlog(log, outdir / "runlogs" / f"{cid}_{est}")
    export_metrics(reports, outdir)
    _write_manifest(outdir, spec_path, spec)
    return EXIT_OK


def cmd_utias(args) -> int:
    noise = NoiseConfig()
    dt = args.dt
    landmark_fraction = args.landmark_fraction
    if args.config:
        data = _load_toml(Path(args.config))
        unknown = set(data) - {"noise", "dt", "landmark_fraction"}
        if unknown:
            raise SpecError(f"{args.config}: unknown keys: {sorted(unknown)}")
        noise = NoiseConfig.from_dict(data.get("noise", {}))
        dt = data.get("dt", dt)
        landmark_fraction = data.get("landmark_fraction", landmark_fraction)
    try:
        ds = parse_subset(args.subset_dir)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("fetch the dataset with scripts/fetch_mrclam.py first", file=sys.stderr)
        return EXIT_RUNTIME
    stream = build_event_stream(ds, dt=dt, landmark_fraction=landmark_fraction)
    if ds.rejected_lines:
        print(f"note: {len(ds.rejected_lines)} malformed line(s) rejected", file=sys.stderr)
    if stream.unknown_barcodes:
        print(f"note: {stream.unknown_barcodes} measurement(s) with unknown barcodes excluded",
              file=sys.stderr)
    outdir = _outdir(args.out)
    print(f"{'estimator':<10}{'ori_rmse_deg':>14}{'pos_rmse_m':>12}")
    for est in args.estimators:
        log, metrics = run_dataset(stream, est, noise)
        print(f"{est:<10}{metrics[('rmse', 'orientation_deg')]:>14.2f}"
              f"{metrics[('rmse', 'position')]:>12.3f}")
        if log is not None:
            export_runlog(log, outdir / est)
    return EXIT_OK


def cmd_obscheck(args) -> int:
    outdir = Path(args.runlog_dir)
    est = args.estimator
    try:
        seq = read_jacobians(outdir, est)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    seq.frame_tag = "transformed" if est in ("tsb", "tjoint") else "original"
    O = build_obs_matrix(seq)
    dim = numerical_unobs_dim(O)
    dim_str = "indeterminate" if dim is None else str(dim)
    print(f"estimator {est}: unobs dim = {dim_str}")
    prior, post = read_estimates(outdir, est)
    if seq.frame_tag == "transformed":
        basis = transformed_unobs_basis(seq.robot_count)
    else:
        basis = standard_unobs_basis(prior[1, :, :2])
    print(f"null-space residual vs ideal basis = {nullspace_residual(O, basis):.3e}")
    dp = delta_p_series(prior[1:, :, :2], post[1:, :, :2])
    final = dp[-1]
    norms = np.hypot(final[:, 0], final[:, 1])
    print("final |delta p| per robot: " + ", ".join(f"{v:.4f}" for v in norms))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cooploc",
                                     description="distributed cooperative localization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run Monte Carlo scenario sweeps from a TOML spec")
    p_sim.add_argument("spec", help="experiment spec (TOML)")
    p_sim.set_defaults(func=cmd_simulate)

    p_ut = sub.add_parser("utias", help="run estimators on an MRCLAM dataset subset")
    p_ut.add_argument("subset_dir", help="directory with the subset's .dat files")
    p_ut.add_argument("--config", help="noise config TOML", default=None)
    p_ut.add_argument("--estimators", nargs="+",
                      default=["central", "osb", "tsb", "naive"])
    p_ut.add_argument("--dt", type=float, default=0.1)
    p_ut.add_argument("--landmark-fraction", type=float, default=0.05)
    p_ut.add_argument("--out", default="out/utias")
    p_ut.set_defaults(func=cmd_utias)

    p_obs = sub.add_parser("obscheck", help="observability audit of a recorded run")
    p_obs.add_argument("runlog_dir")
    p_obs.add_argument("--estimator", default="tsb")
    p_obs.set_defaults(func=cmd_obscheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
