"""l1 error of the 1D ReLU-planar construction on the bimodal target as the piece count grows."""

import argparse
import csv
import sys

from flowcap.construct1d import approximate_target_1d
from flowcap.densities import bimodal_target


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pieces", type=int, nargs="+", default=[10, 25, 50, 100, 200, 300, 500])
    ap.add_argument("--eps", type=float, default=0.05)
    args = ap.parse_args()
    target = bimodal_target()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["pieces", "layers", "l1"])
    for n in args.pieces:
        approx = approximate_target_1d(target, args.eps, n)
        w.writerow([n, len(approx.stack), repr(approx.achieved_l1)])


if __name__ == "__main__":
    main()
