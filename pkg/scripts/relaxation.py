"""Homogeneous relaxation of the two-bump data on a sequence of velocity grids.

Prints the L1 distance to the moment-matched Maxwellian at integer mean free
times and the fitted per-mft decay factor, then writes a CSV and an SVG plot.

    python scripts/relaxation.py --n 16 24 32 --t-max 10
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from kinlab.boltzmann.collision import matched_maxwellian, mean_free_time
from kinlab.boltzmann.grids import AngularQuadrature, VelocityGrid
from kinlab.boltzmann.solver import evolve, initial_field
from kinlab.harness.svgplot import line_plot
from kinlab.sampler import InitialDataSpec


def relax(n, vmax, n_omega, t_max):
    quad = AngularQuadrature.uniform(2, n_omega)
    vg = VelocityGrid(2, vmax, n)
    f = initial_field(InitialDataSpec("two-bump-v"), vg)
    mft = mean_free_time(f, quad)
    M = matched_maxwellian(f.values, vg)
    times = np.arange(0, t_max + 1)
    fields = evolve(f, mft * times, quad)
    return times, np.array([np.abs(g.values - M).sum() * vg.cell_volume for g in fields])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[16, 24, 32])
    ap.add_argument("--vmax", type=float, default=6.0)
    ap.add_argument("--n-omega", type=int, default=16)
    ap.add_argument("--t-max", type=int, default=10)
    ap.add_argument("--out", default="relaxation-out")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, rows = {}, []
    for n in args.n:
        t0 = time.perf_counter()
        times, dist = relax(n, args.vmax, args.n_omega, args.t_max)
        tail = slice(len(times) // 2, None)
        rate = np.exp(np.polyfit(times[tail], np.log(dist[tail]), 1)[0])
        print(f"n={n:3d}: L1 at {args.t_max} mft = {dist[-1]:.3e}, decay factor per mft {rate:.3f} "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)
        series[f"n={n}"] = (times, dist)
        rows += [(n, t, d) for t, d in zip(times, dist)]
    np.savetxt(out / "relaxation.csv", np.array(rows), delimiter=",", fmt="%.8g", header="n,t_mft,l1_distance", comments="")
    line_plot(series, out / "fig_relaxation.svg", xlabel="t (mft)", ylabel="L1 to matched Maxwellian",
              title="two-bump relaxation", logy=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
