"""Approximation rates of the greedy algorithm on lacunary targets.

For each declared smoothness the script measures the semi-norm, runs the
greedy algorithm with thresholds sized for ``2^(k d)`` cells, and prints the
fitted slope of ``log2(error)`` against ``log2(cells)`` next to ``-H/d``.
Run with ``python3 scripts/approx_rates.py [--kmax 7] [--out-dir DIR]``.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

from dyadpoly.approx import ApproxConfig, proof_epsilon, rate_experiment, seminorm
from dyadpoly.targets import lacunary_sum

# (sigma, r): isotropic 1-D cases, then anisotropic 2-D ones
CASES = [
    ((0.5,), (0,)),
    ((1.0,), (1,)),
    ((1.5,), (1,)),
    ((1.0, 2.0), (1, 2)),
    ((1.0, 1.0), (1, 1)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kmin", type=int, default=2)
    ap.add_argument("--kmax", type=int, default=6)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args(argv)

    print(f"{'sigma':>12} {'r':>8} {'semi-norm':>10} {'cells':>24} {'slope':>7} {'expected':>8}")
    for sigma, r in CASES:
        s = lacunary_sum(sigma)
        cfg = ApproxConfig(sigma, r)
        rep = seminorm(s, cfg, 2.0, math.inf, 6 if len(sigma) > 1 else 8)
        eps = [proof_epsilon(k, cfg, 2.0) for k in range(args.kmin, args.kmax + 1)]
        tab = rate_experiment(s, cfg, eps)
        cells = ",".join(str(row["cells"]) for row in tab.rows)
        flag = " (diverging)" if rep.diverging else ""
        print(f"{str(sigma):>12} {str(r):>8} {rep.value:10.3f} {cells:>24} {tab.slope:7.3f} "
              f"{tab.expected_slope:8.3f}{flag}")
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            name = "approx_" + "_".join(f"{v:g}" for v in sigma) + ".csv"
            tab.write_csv(out / name, {"target": f"lacunary{sigma}", "sigma": sigma, "r": r,
                                       "seminorm": rep.value})


if __name__ == "__main__":
    main()
