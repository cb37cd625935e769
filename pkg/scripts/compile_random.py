"""Compile random matrices into ReLU planar and Householder layers and report layer counts and error."""

import argparse

import numpy as np

from flowcap.lincompile import compile_linear


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'d':>3} {'path':>8} {'planar':>6} {'househ':>6} {'sign det':>8} {'rel err':>9}")
    for d in args.dims:
        for _ in range(args.trials):
            A = rng.normal(size=(d, d))
            res = compile_linear(A)
            err = np.linalg.norm(res.matrix() - A) / np.linalg.norm(A)
            sign = int(np.sign(np.linalg.det(A)))
            print(f"{d:3d} {res.path:>8} {res.planar_count:6d} {res.householder_count:6d} {sign:8d} {err:9.1e}")


if __name__ == "__main__":
    main()
