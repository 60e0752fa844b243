#!/usr/bin/env python3
"""Fetch UTIAS MRCLAM dataset subsets into data/mrclam/.

The dataset is never vendored with the package; this script downloads the
official zip archives, verifies the expected files after extraction, and
(optionally) checks a caller-supplied SHA-256 of each archive.

Usage:
    python3 scripts/fetch_mrclam.py 2            # subset 2
    python3 scripts/fetch_mrclam.py 1 2 9        # several subsets
    python3 scripts/fetch_mrclam.py 2 --sha256 <hex>
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import urllib.request
import zipfile
from pathlib import Path

BASE_URL = "http://asrl.utias.utoronto.ca/datasets/mrclam/MRCLAM_Dataset{n}.zip"
EXPECTED = ["Barcodes.dat", "Landmark_Groundtruth.dat"] + [
    f"Robot{r}_{part}.dat"
    for r in range(1, 6)
    for part in ("Groundtruth", "Odometry", "Measurement")
]


def fetch(subset: int, dest_root: Path, sha256: str | None) -> Path:
    url = BASE_URL.format(n=subset)
    dest_root.mkdir(parents=True, exist_ok=True)
    zip_path = dest_root / f"MRCLAM_Dataset{subset}.zip"
    if not zip_path.exists():
        print(f"downloading {url}")
        urllib.request.urlretrieve(url, zip_path)
    if sha256 is not None:
        digest = hashlib.sha256(zip_path.read_bytes()).hexdigest()
        if digest != sha256.lower():
            raise SystemExit(
                f"checksum mismatch for {zip_path}: got {digest}, expected {sha256}"
            )
    target = dest_root / f"MRCLAM_Dataset{subset}"
    with zipfile.ZipFile(zip_path) as zf:
        zf.extractall(dest_root)
    # some archives extract into a nested directory; normalize if needed
    if not target.exists():
        candidates = [p for p in dest_root.iterdir()
                      if p.is_dir() and p.name.lower().startswith("mrclam")
                      and str(subset) in p.name]
        if candidates:
            candidates[0].rename(target)
    missing = [name for name in EXPECTED if not (target / name).exists()]
    if missing:
        raise SystemExit(f"{target} is missing files after extraction: {missing}")
    print(f"subset {subset} ready at {target}")
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("subsets", nargs="+", type=int, choices=range(1, 10),
                        metavar="subset", help="subset number(s), 1-9")
    parser.add_argument("--dest", default="data/mrclam",
                        help="destination directory (default: data/mrclam)")
    parser.add_argument("--sha256", default=None,
                        help="expected SHA-256 of the archive (single subset only)")
    args = parser.parse_args(argv)
    if args.sha256 and len(args.subsets) != 1:
        parser.error("--sha256 applies to a single subset")
    for subset in args.subsets:
        fetch(subset, Path(args.dest), args.sha256)
    return 0


if __name__ == "__main__":
    sys.exit(main())
