#!/usr/bin/env python3
"""Render figures from a `cooploc simulate` output directory.

Reads metrics.csv / series.csv and writes PNGs next to them:
  nees_position.png, nees_orientation.png, rmse_position.png,
  rmse_orientation.png — one line per (estimator, config).

Usage:
    python3 scripts/plot_metrics.py out/
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load_series(path: Path):
    data = defaultdict(lambda: ([], []))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["metric"], row["component"], row["estimator"], row["config_id"])
            steps, values = data[key]
            steps.append(int(row["step"]))
            values.append(float(row["value"]))
    return data


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("outdir", help="directory containing series.csv")
    parser.add_argument("--dpi", type=int, default=120)
    args = parser.parse_args(argv)
    outdir = Path(args.outdir)
    series_path = outdir / "series.csv"
    if not series_path.exists():
        print(f"error: {series_path} not found (run `cooploc simulate` first)",
              file=sys.stderr)
        return 1
    data = load_series(series_path)
    metrics = sorted({(m, c) for (m, c, _, _) in data})
    for metric, component in metrics:
        fig, ax = plt.subplots(figsize=(7, 4))
        for (m, c, est, cid), (steps, values) in sorted(data.items()):
            if (m, c) != (metric, component):
                continue
            ax.plot(steps, values, label=f"{est} / {cid}", linewidth=1.0)
        if metric == "nees":
            ax.axhline(1.0, color="k", linestyle="--", linewidth=0.8,
                       label="consistent (1.0)")
        ax.set_xlabel("step")
        ax.set_ylabel(f"{metric} ({component})")
        ax.legend(fontsize=8)
        fig.tight_layout()
        target = outdir / f"{metric}_{component}.png"
        fig.savefig(target, dpi=args.dpi)
        plt.close(fig)
        print(f"wrote {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
