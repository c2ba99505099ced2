#!/usr/bin/env python3
"""Temporal refinement study: k=2 on a fixed 32x32 mesh, tau halved three times."""

import argparse
import math

from dgpc import PenaltyConfig, builtin_vortex_case
from dgpc.mms import temporal_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--taus", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--csv")
    args = ap.parse_args()

    pen = PenaltyConfig.default(args.k)
    report = temporal_study(builtin_vortex_case(1.0), args.k, args.n, args.taus, args.T,
                            pen, args.workers)
    print(report.summary({"err_u_st": (0.85, math.inf), "err_p_st": (0.35, 0.75)}))
    if args.csv:
        report.write_csv(args.csv)


if __name__ == "__main__":
    main()
