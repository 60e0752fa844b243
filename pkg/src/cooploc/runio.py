"""CSV run-log and metrics export, plus the reader used by the observability audit.

All files are written atomically (temp file + rename) so interrupted runs
never leave truncated CSVs.
"""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .obscheck import ObsMatrixSeq
from .simworld import MetricsReport, RunLog

__all__ = [
    "write_csv_atomic",
    "export_runlog",
    "export_metrics",
    "read_estimates",
    "read_jacobians",
]

_EST_HEADER = ["step", "robot", "x", "y", "theta",
               "P00", "P01", "P02", "P10", "P11", "P12", "P20", "P21", "P22"]


def write_csv_atomic(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _estimate_rows(est, cov):
    T1, n, _ = est.shape
    for t in range(T1):
        for i in range(n):
            yield [t, i, *(f"{v:.12g}" for v in est[t, i]),
                   *(f"{v:.12g}" for v in cov[t, i].ravel())]


def export_runlog(log: RunLog, outdir) -> None:
    """Write truth.csv, estimates_<est>.csv, priors_<est>.csv, events.csv
    and, when Jacobian recording was enabled, jacobians_<est>.csv."""
    outdir = Path(outdir)
    est = log.estimator
    T1, n, _ = log.truth.shape
    write_csv_atomic(
        outdir / "truth.csv",
        ["step", "robot", "x", "y", "theta"],
        ([t, i, *(f"{v:.12g}" for v in log.truth[t, i])] for t in range(T1) for i in range(n)),
    )
    write_csv_atomic(outdir / f"estimates_{est}.csv", _EST_HEADER,
                     _estimate_rows(log.est_post, log.cov_post))
    write_csv_atomic(outdir / f"priors_{est}.csv", ["step", "robot", "x", "y", "theta"],
                     ([t, i, *(f"{v:.12g}" for v in log.est_prior[t, i])]
                      for t in range(T1) for i in range(n)))
    write_csv_atomic(
        outdir / "events.csv",
        ["step", "type", "payload"],
        ([e["step"], e["type"],
          ";".join(f"{k}={v}" for k, v in e.items() if k not in ("step", "type"))]
         for e in log.events),
    )
    if log.jac_F:
        rows = []
        for t, F in enumerate(log.jac_F, start=1):
            for i in range(n):
                rows.append([t, "F", i, "", *(f"{v:.17g}" for v in F[i].ravel())])
            for (obs, tgt), (Ha, Hb) in log.jac_H.get(t, []):
                rows.append([t, "Ha", obs, tgt, *(f"{v:.17g}" for v in Ha.ravel()), "", "", ""])
                rows.append([t, "Hb", obs, tgt, *(f"{v:.17g}" for v in Hb.ravel()), "", "", ""])
        write_csv_atomic(
            outdir / f"jacobians_{est}.csv",
            ["step", "kind", "robot", "target"] + [f"v{k}" for k in range(9)],
            rows,
        )


def export_metrics(reports, outdir) -> None:
    """Write metrics.csv (aggregates) and series.csv (per-step values)."""
    outdir = Path(outdir)
    agg_rows = []
    series_rows = []
    for rep in reports:
        for (metric, component), value in sorted(rep.aggregate.items()):
            agg_rows.append([rep.estimator, rep.config_id, metric, component, f"{value:.10g}"])
        for (metric, component), series in sorted(rep.series.items()):
            for t, value in enumerate(series):
                series_rows.append(
                    [rep.estimator, rep.config_id, t, metric, component, f"{value:.10g}"]
                )
    write_csv_atomic(outdir / "metrics.csv",
                     ["estimator", "config_id", "metric", "component", "value"], agg_rows)
    write_csv_atomic(outdir / "series.csv",
                     ["estimator", "config_id", "step", "metric", "component", "value"],
                     series_rows)


def _read_pose_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(int(r["step"]), int(r["robot"]),
                 float(r["x"]), float(r["y"]), float(r["theta"])) for r in reader]
    T1 = max(r[0] for r in rows) + 1
    n = max(r[1] for r in rows) + 1
    out = np.zeros((T1, n, 3))
    for t, i, x, y, th in rows:
        out[t, i] = (x, y, th)
    return out


def read_estimates(outdir, estimator):
    """Return (prior (T+1,N,3), posterior (T+1,N,3)) pose estimates."""
    outdir = Path(outdir)
    post = _read_pose_csv(outdir / f"estimates_{estimator}.csv")
    prior = _read_pose_csv(outdir / f"priors_{estimator}.csv")
    return prior, post


def read_jacobians(outdir, estimator) -> ObsMatrixSeq:
    """Rebuild an observability sequence from an exported jacobians CSV."""
    path = Path(outdir) / f"jacobians_{estimator}.csv"
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found: re-run with Jacobian recording enabled"
        )
    per_step_F: dict[int, dict[int, np.ndarray]] = {}
    per_step_H: dict[int, list] = {}
    pending: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = int(row["step"])
            kind = row["kind"]
            i = int(row["robot"])
            if kind == "F":
                vals = np.array([float(row[f"v{k}"]) for k in range(9)]).reshape(3, 3)
                per_step_F.setdefault(t, {})[i] = vals
            else:
                tgt = int(row["target"])
                vals = np.array([float(row[f"v{k}"]) for k in range(6)]).reshape(2, 3)
                key = (t, i, tgt)
                slot = pending.setdefault(key, {})
                slot["a" if kind == "Ha" else "b"] = vals
                if "a" in slot and "b" in slot:
                    per_step_H.setdefault(t, []).append((i, tgt, slot["a"], slot["b"]))
                    del pending[key]
    n = max(max(d) for d in per_step_F.values()) + 1
    seq = ObsMatrixSeq(robot_count=n)
    for t in sorted(per_step_F):
        F = np.zeros((3 * n, 3 * n))
        for i, blk in per_step_F[t].items():
            F[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = blk
        H = None
        if t in per_step_H:
            rows = []
            for obs, tgt, Ha, Hb in per_step_H[t]:
                row = np.zeros((2, 3 * n))
                row[:, 3 * obs : 3 * obs + 3] = Ha
                row[:, 3 * tgt : 3 * tgt + 3] = Hb
                rows.append(row)
            H = np.vstack(rows)
        seq.append(F, H)
    return seq
