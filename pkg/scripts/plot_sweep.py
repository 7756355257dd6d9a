#!/usr/bin/env python3
"""Box plots of a registration sweep CSV (optional; needs matplotlib).

    python scripts/plot_sweep.py sweep.csv --out sweep.png
"""

import argparse
import sys
from pathlib import Path

import numpy as np


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("--out", default=None, help="PNG path (default: show)")
    args = ap.parse_args(argv)

    import matplotlib

    if args.out:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [line.split(",") for line in Path(args.csv).read_text().splitlines()[1:]]
    by_d = {}
    for r in rows:
        by_d.setdefault(int(r[0]), []).append((float(r[2]), float(r[3])))
    dists = sorted(by_d)
    rot = [np.degrees([x[0] for x in by_d[d]]) for d in dists]
    trans = [[x[1] for x in by_d[d]] for d in dists]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.boxplot(rot, positions=dists)
    ax1.set_xlabel("frame distance")
    ax1.set_ylabel("rotation error (deg)")
    ax2.boxplot(trans, positions=dists)
    ax2.set_xlabel("frame distance")
    ax2.set_ylabel("translation error (m)")
    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=150)
        print(f"wrote {args.out}")
    else:
        plt.show()
    return 0


if __name__ == "__main__":
    sys.exit(run())
