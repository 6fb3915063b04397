"""Estimation rate study: mean exact risk against n, with the oracle risk alongside.

Prints one row per sample size and the fitted log-log slopes of the estimator
and of the oracle next to the minimax exponent ``-2H/(d+2H)``.
Run with ``python3 scripts/estimation_rates.py [--density takagi] [--out rates.csv]``.
"""

from __future__ import annotations

import argparse
import time

from dyadpoly.simulate import RNG_NAME, builtin_density, rate_study


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--density", default="takagi")
    ap.add_argument("--d", type=int, default=1)
    ap.add_argument("--n-min", type=int, default=512)
    ap.add_argument("--doublings", type=int, default=5)
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    truth = builtin_density(args.density, args.d)
    ns = [args.n_min * 2 ** i for i in range(args.doublings + 1)]
    t0 = time.perf_counter()
    study = rate_study(truth, ns, args.replicates, seed=args.seed, threads=args.threads,
                       with_oracle=True)
    print(f"density {truth.name}, {args.replicates} replicates, seed {args.seed} ({RNG_NAME})")
    print(f"{'n':>7} {'mean risk':>11} {'se':>9} {'oracle':>11} {'ratio':>6} {'cells':>6}")
    for row, orc in zip(study.rows, study.oracle):
        print(f"{row['n']:7d} {row['mean']:11.4e} {row['se']:9.2e} {orc:11.4e} "
              f"{row['mean'] / orc:6.2f} {row['mean_cells']:6.1f}")
    print(f"slope {study.slope:.3f}, oracle slope {study.oracle_slope:.3f}, "
          f"minimax {study.expected_slope:.3f} ({time.perf_counter() - t0:.0f} s)")
    if args.out:
        study.write_csv(args.out, {"density": truth.name, "replicates": args.replicates})


if __name__ == "__main__":
    main()
