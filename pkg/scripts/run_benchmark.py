#!/usr/bin/env python3
"""Fit the synthetic benchmark terrain and print the iteration table."""
import argparse
import time

from lrterrain import FitConfig, fit, write_surface_binary
from lrterrain.benchmark import benchmark_points
from lrterrain.evaluate import distance_field


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=100_000, help="point count")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--max-iter", type=int, default=7)
    ap.add_argument("--tolerance-scale", type=float, default=1.0,
                    help="multiple of the default tolerance (0.5%% of range)")
    ap.add_argument("-o", "--output", help="write the surface here")
    args = ap.parse_args()

    pts, tau = benchmark_points(args.n, seed=args.seed)
    tau *= args.tolerance_scale
    print(f"{args.n} points, tolerance {tau:.4g}")
    t0 = time.perf_counter()
    surface, reports, flags = fit(pts, FitConfig(tolerance=tau,
                                                 max_iterations=args.max_iter))
    dt = time.perf_counter() - t0

    print(reports[0].header())
    for r in reports:
        print(r.row())
    fld = distance_field(surface, pts, tau)
    status = "converged" if flags["converged"] else "not converged"
    print(f"{status} after {flags['iterations']} iterations in {dt:.1f}s; "
          f"{len(surface)} coefficients, "
          f"{int((fld['status'] != 0).sum())} points out of tolerance")
    if args.output:
        write_surface_binary(args.output, surface)
        print(f"surface written to {args.output}")


if __name__ == "__main__":
    main()
