"""Planner vs. baseline on the bundled scenes; prints a markdown table.

    python3 scripts/benchmark.py [--seeds 0 1 2] [--scenes room pillars corridor] [--per-run]
"""

import argparse
import time

import numpy as np

from nbvkit.benchmark import markdown_table, run_benchmark
from nbvkit.oracle import BUILTIN_SCENES
from nbvkit.planner import CollisionDetector


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--scenes", nargs="+", default=list(BUILTIN_SCENES))
    ap.add_argument("--per-run", action="store_true", help="also print one line per run")
    args = ap.parse_args()

    t0 = time.perf_counter()
    outcomes = run_benchmark(args.scenes, tuple(args.seeds))
    total = time.perf_counter() - t0
    print(markdown_table(outcomes))
    print(f"\ntotal wall time {total:.1f}s")

    wins = 0
    pairs = 0
    for scene in args.scenes:
        for seed in args.seeds:
            p, b = [next(o for o in outcomes if o.scene == scene and o.seed == seed and o.method == m)
                    for m in ("planner", "baseline")]
            ok = p.report.coverage >= b.report.coverage and p.report.noise_ratio <= b.report.noise_ratio
            wins += ok
            pairs += 1
            if args.per_run:
                cfg_r = 0.15
                clear = min((float(CollisionDetector.from_cloud(cloud, cfg_r).distances(seg.centers).min())
                             for seg, cloud in zip(p.result.segments, p.result.planning_clouds)), default=np.inf)
                print(f"{scene:9s} seed {seed}: planner cov {p.report.coverage:5.2f} nr {p.report.noise_ratio:.3f} "
                      f"F {p.report.fscore:.3f} | baseline cov {b.report.coverage:5.2f} "
                      f"nr {b.report.noise_ratio:.3f} F {b.report.fscore:.3f} | "
                      f"{'ok' if ok else '--'} min clearance {clear:.3f}")
    print(f"planner dominates (coverage >=, noise <=) in {wins}/{pairs} runs")


if __name__ == "__main__":
    main()
