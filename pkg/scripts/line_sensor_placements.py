#!/usr/bin/env python3
"""Least expected reward of every two-sensor placement on a line world.

Each placement is bisected with the SMT oracle (randomized strategies); mirror
images are evaluated once. Prints a table sorted by the bisected value.
"""
import argparse
import json

from oopsynth.experiments import line_placement_minima
from oopsynth.smt import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=7, help="line length (odd)")
    ap.add_argument("--sensors", type=int, default=2)
    ap.add_argument("--tol", type=float, default=1e-3)
    ap.add_argument("--timeout", type=float, default=60.0)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    rows = line_placement_minima(args.k, args.sensors, args.tol, SolverConfig(timeout=args.timeout))
    if args.json:
        print(json.dumps([{"sensors": r.sensors, "mirror": r.mirror, "min_reward": r.min_reward, "seconds": r.wall_time} for r in rows], indent=1))
        return
    print(f"{'sensors':<12} {'mirror':<12} {'min reward':>10} {'time':>7}")
    for r in rows:
        fmt = lambda ss: "{" + ",".join(f"s{s}" for s in ss) + "}"  # noqa: E731
        print(f"{fmt(r.sensors):<12} {fmt(r.mirror):<12} {r.min_reward:>10.4f} {r.wall_time:>6.1f}s")


if __name__ == "__main__":
    main()
