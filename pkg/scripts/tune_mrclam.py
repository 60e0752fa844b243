#!/usr/bin/env python3
"""Grid-search filter noise parameters for an MRCLAM subset.

Evaluates the centralized estimator's position RMSE over a grid of
odometry / measurement sigmas and writes the best combination as a TOML
config compatible with `cooploc utias --config`.

Usage:
    python3 scripts/tune_mrclam.py data/mrclam/MRCLAM_Dataset2 \
        --out configs/mrclam/subset2.toml
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from cooploc.mrclam import NoiseConfig, build_event_stream, parse_subset, run_dataset

DEFAULT_GRID = {
    "odom_xy": [0.002, 0.004, 0.008, 0.016],
    "odom_theta": [0.0025, 0.005, 0.01],
    "range_sigma": [0.05, 0.1, 0.2],
    "bearing_sigma": [0.03, 0.06, 0.12],
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("subset_dir")
    parser.add_argument("--dt", type=float, default=0.1)
    parser.add_argument("--landmark-fraction", type=float, default=0.05)
    parser.add_argument("--estimator", default="central",
                        help="estimator scored by the search (default: central)")
    parser.add_argument("--out", default=None, help="write the best config as TOML")
    args = parser.parse_args(argv)

    stream = build_event_stream(parse_subset(args.subset_dir), dt=args.dt,
                                landmark_fraction=args.landmark_fraction)
    if stream.steps == 0:
        print("error: subset has no usable time overlap", file=sys.stderr)
        return 1

    best = None
    combos = list(itertools.product(DEFAULT_GRID["odom_xy"],
                                    DEFAULT_GRID["odom_theta"],
                                    DEFAULT_GRID["range_sigma"],
                                    DEFAULT_GRID["bearing_sigma"]))
    for idx, (oxy, oth, rs, bs) in enumerate(combos, start=1):
        noise = NoiseConfig(odom_sigma=(oxy, oxy / 4, oth),
                            range_sigma=rs, bearing_sigma=bs)
        _, metrics = run_dataset(stream, args.estimator, noise)
        rmse_pos = metrics[("rmse", "position")]
        print(f"[{idx}/{len(combos)}] odom=({oxy},{oxy / 4},{oth}) "
              f"range={rs} bearing={bs} -> pos RMSE {rmse_pos:.4f} m")
        if best is None or rmse_pos < best[0]:
            best = (rmse_pos, noise)

    rmse_pos, noise = best
    print(f"\nbest: pos RMSE {rmse_pos:.4f} m with {noise}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(
            "# generated by scripts/tune_mrclam.py\n"
            f"dt = {args.dt}\n"
            f"landmark_fraction = {args.landmark_fraction}\n\n"
            "[noise]\n"
            f"odom_sigma = [{noise.odom_sigma[0]}, {noise.odom_sigma[1]}, "
            f"{noise.odom_sigma[2]}]\n"
            f"range_sigma = {noise.range_sigma}\n"
            f"bearing_sigma = {noise.bearing_sigma}\n"
            f"init_pos_sigma = {noise.init_pos_sigma}\n"
            f"init_heading_sigma = {noise.init_heading_sigma}\n"
        )
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
