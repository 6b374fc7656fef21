"""Conservation, replay and reversibility of the event-driven dynamics across densities."""
import argparse
import sys
import time

from kinlab.dynamics import conservation_drift, replay_defect, reversibility_error, run
from kinlab.phase import ModelParams
from kinlab.sampler import InitialDataSpec, RngStream, sample_configuration


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-2, 3e-3, 1e-3])
    ap.add_argument("--t", type=float, default=2.0, help="duration in mean free times")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    spec = InitialDataSpec("gaussian-x-maxwellian-v", sigma=0.135)
    T = args.t * spec.mean_free_time()
    print(f"{'eps':>7} {'N':>5} {'events':>7} {'drift p':>9} {'drift e':>9} {'replay':>9} {'reverse':>9} {'s':>6}")
    for eps in args.eps:
        params = ModelParams(2, eps)
        c = sample_configuration(params, spec, RngStream(args.seed))
        t0 = time.perf_counter()
        log = run(c, T, params)
        dp, de = conservation_drift(log)
        rev = reversibility_error(c, T, params)
        print(f"{eps:7.0e} {c.n:5d} {log.n_events:7d} {dp:9.1e} {de:9.1e} {replay_defect(log):9.1e} {rev:9.1e} "
              f"{time.perf_counter() - t0:6.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
