"""Command-line interface: ``dyadpoly <command> [flags]``.

Commands
--------
fit        fit the penalized estimator to a CSV sample and write a model file
approx     run the greedy approximation algorithm on a built-in target
rates      estimation rate study on a built-in test density
calibrate  choose penalty constants on the oracle suite
sample     draw a sample from a built-in test density
inspect    print a model file

Exit codes: 0 on success, 2 on I/O errors, 3 on invalid flags or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import Sequence

import numpy as np

from . import approx, estimate, simulate, targets
from .dataio import SampleFormatError, load_model, read_sample_csv, save_model, write_sample_csv
from .dyadic import Leaf, encode_tree

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 2, 3


class UsageError(Exception):
    def __init__(self, flag: str | None, msg: str):
        super().__init__(f"{flag}: {msg}" if flag else msg)
        self.flag = flag


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(None, message)


# ---------------------------------------------------------------------------
# Flag parsing helpers

def _floats(text: str, flag: str, length: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise UsageError(flag, f"expected numbers, got {text!r}") from None
    if not vals or (length is not None and len(vals) != length):
        raise UsageError(flag, f"expected {length or 'at least one'} values, got {len(vals)}")
    return vals


def _ints(text: str, flag: str, length: int | None = None) -> tuple[int, ...]:
    vals = _floats(text, flag, length)
    if any(v != int(v) or v < 0 for v in vals):
        raise UsageError(flag, "expected nonnegative integers")
    return tuple(int(v) for v in vals)


def _rstar(text: str | None, d: int, flag: str = "--rstar"):
    if text is None or text in ("constant", "log"):
        return text
    vals = _ints(text, flag)
    if len(vals) == 1:
        vals = vals * d
    if len(vals) != d:
        raise UsageError(flag, f"needs {d} entries")
    return vals


def _jstar(text: str, flag: str = "--jstar"):
    if text == "auto":
        return "auto"
    try:
        J = int(text)
    except ValueError:
        raise UsageError(flag, f"expected 'auto' or an integer, got {text!r}") from None
    if J < 0:
        raise UsageError(flag, "must be nonnegative")
    return J


def _kappa(text: str | None):
    if text is None:
        return None
    vals = _floats(text, "--kappa", 5)
    if any(v < 0 for v in vals):
        raise UsageError("--kappa", "constants must be nonnegative")
    return vals


def _positive(value, flag, minimum=1):
    if value < minimum:
        raise UsageError(flag, f"must be at least {minimum}")
    return value


def _density(name: str, d: int):
    try:
        return simulate.builtin_density(name, d)
    except (KeyError, ValueError) as exc:
        raise UsageError("--density", str(exc).strip("'\"")) from None


# ---------------------------------------------------------------------------
# Commands

def cmd_fit(args) -> int:
    try:
        x = read_sample_csv(args.input, args.d)
    except SampleFormatError as exc:
        raise UsageError("--input", str(exc)) from None
    n, d = x.shape
    if n < 4:
        raise UsageError("--input", f"need at least 4 points, got {n}")
    cfg = estimate.make_config(n, d, r_star=_rstar(args.rstar, d), kappa=_kappa(args.kappa),
                               J_star=_jstar(args.jstar))
    model = estimate.fit(x, cfg)
    echo = {"command": "fit", "input": args.input, "n": n, "d": d, **cfg.to_dict()}
    if args.out:
        save_model(args.out, model, echo)
    print(f"n={n} J_star={cfg.J_star} cells={model.n_cells} criterion={model.criterion:.6g}")
    return EXIT_OK


def cmd_approx(args) -> int:
    sigma = _floats(args.sigma, "--sigma")
    d = len(sigma)
    r = _ints(args.r, "--r") if args.r else (int(math.ceil(max(sigma))),) * d
    if len(r) == 1 and d > 1:
        r = r * d
    if len(r) != d:
        raise UsageError("--r", f"needs {d} entries to match --sigma")
    q = math.inf if args.q in ("inf", "infinity") else _floats(args.q, "--q", 1)[0]
    try:
        s = targets.builtin(args.target, d, sigma if args.target == "lacunary" else None)
    except KeyError as exc:
        raise UsageError("--target", str(exc).strip("'\"")) from None
    try:
        base = approx.ApproxConfig(sigma, r, q=q, max_level=args.max_level)
    except ValueError as exc:
        raise UsageError("--sigma", str(exc)) from None
    if args.k_sweep:
        k0, k1 = _ints(args.k_sweep.replace(":", " "), "--k-sweep", 2)
        eps = [approx.proof_epsilon(k, base, p=2.0) for k in range(k0, k1 + 1)]
    else:
        eps = [_positive(args.eps, "--eps", 1e-300)]
    table = approx.rate_experiment(s, base, eps)
    header = {"command": "approx", "target": args.target, "sigma": list(sigma), "r": list(r), "q": q}
    for row in table.rows:
        print(f"epsilon={row['epsilon']:.6g} cells={row['cells']} error={row['error']:.6g}")
    if len(table.rows) > 1:
        print(f"slope={table.slope:.4f} expected={table.expected_slope:.4f}")
    if args.out:
        table.write_csv(args.out, header)
    return EXIT_OK


def cmd_rates(args) -> int:
    truth = _density(args.density, args.d)
    ns = _ints(args.n_schedule, "--n-schedule")
    if min(ns) < 4:
        raise UsageError("--n-schedule", "every n must be at least 4")
    _positive(args.replicates, "--replicates")
    study = simulate.rate_study(truth, ns, args.replicates, seed=args.seed, threads=args.threads,
                                r_star=_rstar(args.rstar, args.d), kappa=_kappa(args.kappa),
                                with_oracle=args.oracle)
    for row in study.rows:
        print(f"n={row['n']} mean={row['mean']:.6g} se={row['se']:.3g}")
    line = f"slope={study.slope:.4f} expected={study.expected_slope:.4f}"
    if study.oracle_slope is not None:
        line += f" oracle_slope={study.oracle_slope:.4f}"
    print(line)
    if args.out:
        study.write_csv(args.out, {"command": "rates", "density": truth.name,
                                   "replicates": args.replicates, "rstar": args.rstar,
                                   "kappa": args.kappa or list(estimate.DEFAULT_KAPPA)})
    return EXIT_OK


def _read_grid(text: str) -> list[tuple[float, ...]]:
    try:
        with open(text) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip() and not ln.startswith("#")]
    except FileNotFoundError:
        lines = text.split(";")
    return [_floats(ln, "--grid", 5) for ln in lines if ln.strip()]


def cmd_calibrate(args) -> int:
    grid = _read_grid(args.grid)
    _positive(args.replicates, "--replicates")
    suite = simulate.oracle_suite(args.d)
    cal = simulate.calibrate(grid, suite, args.n, args.replicates, args.seed,
                             J_star=_jstar(args.jstar) if args.jstar != "auto" else None,
                             r_star=_rstar(args.rstar, args.d), threads=args.threads)
    for kap, m in zip(cal.grid, cal.mean_ratio):
        print(f"kappa={','.join(f'{v:g}' for v in kap)} mean_ratio={m:.4f}")
    print(f"recommended kappa={','.join(f'{v:g}' for v in cal.best)}")
    if args.out:
        cal.write_csv(args.out, {"command": "calibrate", "d": args.d, "n": args.n,
                                 "replicates": args.replicates, "jstar": args.jstar})
    return EXIT_OK


def cmd_sample(args) -> int:
    truth = _density(args.density, args.d)
    _positive(args.n, "--n", 4)
    x = simulate.sample_density(truth, args.n, args.seed)
    header = {"command": "sample", "density": truth.name, "n": args.n, "seed": args.seed,
              "rng": simulate.RNG_NAME}
    write_sample_csv(args.out or sys.stdout, x, header)
    return EXIT_OK


def _ascii_tree(tree, prefix: str = "") -> list[str]:
    if isinstance(tree, Leaf):
        return [prefix + "leaf"]
    out = [prefix + f"cut axis {tree.direction}"]
    for child in (tree.left, tree.right):
        out += _ascii_tree(child, prefix + "  ")
    return out


def describe(model: estimate.FittedModel) -> str:
    lines = [f"d={model.d} cells={model.n_cells} criterion={model.criterion:.10g}",
             f"tree: {encode_tree(model.tree)}"]
    lines += _ascii_tree(model.tree)
    for K, r, c in zip(model.cells, model.degrees, model.density.coeffs):
        lines.append(f"{K}  degree={r}  |coef|={float(np.sqrt(np.sum(c * c))):.6g}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    try:
        model = load_model(args.model)
    except ValueError as exc:
        raise UsageError("model", str(exc)) from None
    print(describe(model))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dyadpoly", description="Dyadic piecewise polynomial estimation and approximation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("fit", help="fit a density model to a CSV sample")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--rstar", default=None, help="per-axis max degrees, 'constant' or 'log'")
    p.add_argument("--kappa", default=None, help="five penalty constants")
    p.add_argument("--jstar", default="auto")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("approx", help="greedy approximation of a built-in target")
    p.add_argument("--target", required=True)
    p.add_argument("--sigma", required=True)
    p.add_argument("--r", default=None)
    p.add_argument("--q", default="2")
    p.add_argument("--max-level", type=int, default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eps", type=float, default=1e-2)
    g.add_argument("--k-sweep", default=None, help="K0:K1, thresholds for 2^(kd) cells")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("rates", help="estimation rate study")
    p.add_argument("--density", default="takagi")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n-schedule", default="512,1024,2048,4096,8192")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--rstar", default=None)
    p.add_argument("--kappa", default=None)
    p.add_argument("--oracle", action="store_true", help="also report exact oracle risks")
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("calibrate", help="choose penalty constants on the oracle suite")
    p.add_argument("--grid", required=True, help="file or 'k1,..,k5;k1,..,k5'")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--jstar", default="auto")
    p.add_argument("--rstar", default=None)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sample", help="draw from a built-in test density")
    p.add_argument("--density", required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("inspect", help="print a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads", "must be at least 1")
        if getattr(args, "d", None) is not None and args.d < 1:
            raise UsageError("--d", "must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
