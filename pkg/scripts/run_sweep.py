"""Run the epsilon sweep and print the distance, chaos and cluster trends.

    python scripts/run_sweep.py --config scripts/configs/default.cfg --out sweep-out
"""
import argparse
import sys
import time

from kinlab.harness.config import ExperimentConfig
from kinlab.harness.study import convergence_study


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--eps-list", default="1e-2,3e-3,1e-3")
    ap.add_argument("--out", default="sweep-out")
    args = ap.parse_args(argv)
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    eps = [float(e) for e in args.eps_list.split(",")]
    t0 = time.perf_counter()
    rep = convergence_study(cfg, eps, args.out, log=lambda m: print(m, flush=True))
    print(f"\n{'eps':>8} {'mu':>8} " + " ".join(f"{'d(t=' + format(t, 'g') + ')':>16}" for t in rep.times))
    for k, (e, mu) in enumerate(zip(rep.eps, rep.mu)):
        cells = " ".join(f"{rep.distances[t][k][0]:7.4f}+-{rep.distances[t][k][1]:6.4f}" for t in rep.times)
        print(f"{e:8.0e} {mu:8.0f} {cells}")
    print(f"E2 slope vs mu: {rep.chaos_slope:.3f}")
    for w, rows in rep.clusters.items():
        print(f"window {w}: cycle fractions " + ", ".join(f"{s['cycle_fraction']:.4f}" for s in rows)
              + "; largest fractions " + ", ".join(f"{s['largest_fraction']:.3f}" for s in rows))
    print(f"total {time.perf_counter() - t0:.0f} s; outputs in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
