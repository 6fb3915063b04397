"""Calibrate the penalty constants on the oracle suite and print the table.

The recommended point is the one shipped as ``DEFAULT_KAPPA``.  Run with
``python3 scripts/calibrate_kappa.py [--out table.csv]``.
"""

from __future__ import annotations

import argparse
import itertools

import numpy as np

from dyadpoly.simulate import calibrate, oracle_suite

GRID = [(k1, k2, c, c, c)
        for k1, k2, c in itertools.product((2.0, 3.0, 4.0, 6.0, 8.0), (0.5, 1.0, 2.0), (0.02, 0.05, 0.1))]
# (d, J_star) pairs small enough for exhaustive oracles
SETTINGS = ((1, 4), (2, 2))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--replicates", type=int, default=150)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    cals = [calibrate(GRID, oracle_suite(d), args.n, args.replicates, args.seed, J_star=J,
                      threads=args.threads) for d, J in SETTINGS]
    ratios = np.concatenate([c.ratios for c in cals], axis=1)
    names = [f"{c.densities[i]}" for c in cals for i in range(len(c.densities))]
    mean = ratios.mean(axis=1)
    order = np.argsort(mean, kind="stable")
    print("kappa".ljust(34), " ".join(n[:10].rjust(10) for n in names), "mean".rjust(7))
    for i in order:
        print(str(GRID[i]).ljust(34), " ".join(f"{v:10.3f}" for v in ratios[i]), f"{mean[i]:7.3f}")
    best = GRID[int(order[0])]
    print(f"recommended kappa: {best}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(f"# n: {args.n}\n# replicates: {args.replicates}\n# seed: {args.seed}\n")
            fh.write(f"# settings (d, J_star): {SETTINGS}\n# recommended: {best}\n")
            fh.write("k1,k2,k3,k4,k5," + ",".join(names) + ",mean_ratio\n")
            for kap, row, m in zip(GRID, ratios, mean):
                fh.write(",".join(map(str, kap)) + "," + ",".join(repr(float(v)) for v in row)
                         + f",{float(m)!r}\n")
    return best


if __name__ == "__main__":
    main()
