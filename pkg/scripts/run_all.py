"""Run every registered experiment with default parameters and print each manifest summary."""

import argparse
import json
import time

from flowcap.experiments import DEFAULTS, ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", nargs="*", choices=sorted(DEFAULTS), help="subset of experiments")
    args = ap.parse_args()
    for name in args.only or sorted(DEFAULTS):
        t0 = time.perf_counter()
        manifest = run_experiment(ExperimentConfig(name, {}, args.seed, args.out))
        print(f"{name:24s} {time.perf_counter() - t0:6.1f}s  {json.dumps(manifest['summary'])}")


if __name__ == "__main__":
    main()
