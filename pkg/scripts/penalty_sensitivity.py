#!/usr/bin/env python3
"""Coercivity margin of a_D against the DG norm for a range of penalties.

Prints min theta^T A_D theta / ||theta||_DG^2; the identity suite asks for >= 1/2.
"""

import argparse
import scipy.linalg as sl

from dgpc import DGOperators, PenaltyConfig, build_uniform_mesh, make_spaces


def margin(n, k, sigma):
    X, M = make_spaces(build_uniform_mesh(n), k)
    ops = DGOperators(X, M, PenaltyConfig(sigma, sigma))
    A = ops.aD.matrix.toarray()
    E = ops.energy_X.matrix.toarray()
    return float(sl.eigvalsh(A, E).min())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--levels", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[2, 3, 4, 6, 8, 12, 16, 40])
    args = ap.parse_args()
    print("sigma " + " ".join(f"n={n:<6d}" for n in args.levels))
    for s in args.sigmas:
        print(f"{s:5g} " + " ".join(f"{margin(n, args.k, s):8.4f}" for n in args.levels))


if __name__ == "__main__":
    main()
