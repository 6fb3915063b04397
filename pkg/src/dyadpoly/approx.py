"""Greedy adaptive approximation over anisotropic dyadic families.

A cell ``K`` of level ``j`` is kept when its best-approximation error
``E_r(s, K)_q`` is below ``epsilon`` and otherwise replaced by its children
on level ``j + 1``.  Also: linear approximation errors on the full level-``k``
grids, the smoothness semi-norm built from them, closed-form rate parameters,
and log-log rate experiments.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .dyadic import (AnisoFamily, BudgetExceeded, DyadicRectangle, aniso_cells,
                     aniso_children, harmonic_mean, leaves, tree_from_cells)
from .legendre import PiecewisePoly, best_poly, lambda_size, pi_weight, project_many


@dataclass(frozen=True)
class ApproxConfig:
    sigma: tuple[float, ...]
    r: tuple[int, ...]
    q: float = 2.0
    epsilon: float = 1e-2
    max_level: int | None = None
    quad_order: int = 12
    grid: int = 64
    max_cells: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        object.__setattr__(self, "r", tuple(int(g) for g in self.r))
        if len(self.sigma) != len(self.r):
            raise ValueError("sigma and r must have the same length")
        # equality is the saturation boundary; linear errors and semi-norms stay defined there
        if any(s > g + 1 for s, g in zip(self.sigma, self.r)):
            raise ValueError("need sigma_l <= r_l + 1 on every axis")
        if not self.q >= 1:
            raise ValueError("q must lie in [1, inf]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def d(self) -> int:
        return len(self.r)

    @property
    def family(self) -> AnisoFamily:
        return AnisoFamily(self.sigma)


@dataclass
class ApproxResult:
    cells: list[tuple[int, DyadicRectangle]]
    errors: np.ndarray
    approximant: PiecewisePoly
    q: float

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def total_error(self) -> float:
        """``||s - A||_q`` assembled from the per-cell errors."""
        if math.isinf(self.q):
            return float(self.errors.max())
        return float(np.sum(self.errors ** self.q) ** (1.0 / self.q))


def _cell_fits(s: Callable, cells: Sequence[DyadicRectangle], cfg: ApproxConfig):
    """Best polynomials and errors for a batch of cells."""
    coefs: list[np.ndarray] = [None] * len(cells)
    errs = np.empty(len(cells))
    if cfg.q == 2:
        groups = defaultdict(list)
        for i, K in enumerate(cells):
            groups[K.scale].append(i)
        for idx in groups.values():
            c, e = project_many(s, [cells[i] for i in idx], cfg.r, cfg.quad_order)
            for i, ci, ei in zip(idx, c, e):
                coefs[i], errs[i] = ci, ei
    else:
        for i, K in enumerate(cells):
            coefs[i], errs[i] = best_poly(s, K, cfg.r, cfg.q, cfg.grid, cfg.quad_order)
    return coefs, errs


def greedy_partition(s: Callable, cfg: ApproxConfig, schedule: str = "all") -> ApproxResult:
    """Run the refinement algorithm and return the final partition and approximant.

    ``schedule="all"`` refines every violating cell in each pass,
    ``schedule="one"`` refines a single violating cell per step.  Both end on
    the same partition because the stopping test is evaluated per cell.
    """
    if schedule not in ("all", "one"):
        raise ValueError("schedule must be 'all' or 'one'")
    fam = cfg.family
    root = DyadicRectangle.unit(cfg.d)
    c0, e0 = _cell_fits(s, [root], cfg)
    # active cells: (level, rect) -> (coef, err)
    active = {(0, root): (c0[0], e0[0])}

    def refinable(j, err):
        return err >= cfg.epsilon and (cfg.max_level is None or j < cfg.max_level)

    while True:
        todo = [key for key, (_, e) in active.items() if refinable(key[0], e)]
        if not todo:
            break
        if schedule == "one":
            todo = [min(todo, key=lambda kv: (kv[0], kv[1]))]
        kids = []
        for j, K in todo:
            del active[(j, K)]
            try:
                kids.extend((j + 1, ch) for ch in aniso_children(K, fam, j))
            except BudgetExceeded as exc:
                raise BudgetExceeded(f"refinement below level {j} exceeds the bit budget") from exc
        if len(active) + len(kids) > cfg.max_cells:
            raise BudgetExceeded(f"more than {cfg.max_cells} cells")
        coefs, errs = _cell_fits(s, [K for _, K in kids], cfg)
        for key, c, e in zip(kids, coefs, errs):
            active[key] = (c, e)

    keys = sorted(active, key=lambda kv: kv[1])
    tree = tree_from_cells([K for _, K in keys], cfg.d)
    pp = _as_piecewise(tree, cfg.d, {K: active[(j, K)][0] for j, K in keys})
    errors = np.array([active[key][1] for key in keys])
    return ApproxResult(cells=keys, errors=errors, approximant=pp, q=cfg.q)


def _as_piecewise(tree, d, coef_by_cell) -> PiecewisePoly:
    return PiecewisePoly(tree, d, tuple(coef_by_cell[K] for K in leaves(tree, d)))


def linear_error(s: Callable, cfg: ApproxConfig, k: int, p: float = 2.0) -> float:
    """Best ``L_p`` error of piecewise polynomials on the full level-``k`` grid."""
    cells = aniso_cells(cfg.family, k)
    if p == 2:
        _, errs = project_many(s, cells, cfg.r, cfg.quad_order)
    else:
        errs = np.array([best_poly(s, K, cfg.r, p, cfg.grid, cfg.quad_order)[1] for K in cells])
    if math.isinf(p):
        return float(errs.max())
    return float(np.sum(errs ** p) ** (1.0 / p))


@dataclass
class SmoothnessReport:
    levels: list[int]
    errors: list[float]
    value: float
    tail: float
    diverging: bool
    params: dict = field(default_factory=dict)


def seminorm(s: Callable, cfg: ApproxConfig, p: float, p_prime: float, kmax: int) -> SmoothnessReport:
    """Truncated smoothness semi-norm ``(sum_k (2^(k sigma_min) e_k)^p')^(1/p')`` over ``k <= kmax``.

    ``tail`` is the last weighted term.  ``diverging`` is set when a line fitted
    to ``log2`` of the weighted terms over the upper half of the levels rises
    by more than 0.1 per level, which means ``s`` is rougher than ``sigma``.
    """
    levels = list(range(kmax + 1))
    errs = [linear_error(s, cfg, k, p) for k in levels]
    smin = cfg.family.sigma_min
    terms = np.array([2.0 ** (k * smin) * e for k, e in zip(levels, errs)])
    if math.isinf(p_prime):
        value = float(terms.max())
    else:
        value = float(np.sum(terms ** p_prime) ** (1.0 / p_prime))
    upper = [k for k in levels[len(levels) // 2:] if terms[k] > 0]
    growth = fit_slope(upper, np.log2(terms[upper])) if len(upper) >= 2 else 0.0
    diverging = bool(growth > 0.1)
    return SmoothnessReport(levels, errs, value, float(terms[-1]), diverging,
                            theory_params(cfg.sigma, p, cfg.d, cfg.r))


def theory_params(sigma: Sequence[float], p: float, d: int, r_star: Sequence[int]) -> dict:
    """Closed-form rate quantities for smoothness ``sigma`` measured in ``L_p``."""
    H = harmonic_mean(sigma)
    smin = min(sigma)
    b = max(1.0 / p - 0.5, 0.0)
    mu = H / smin
    a = 0.5 * (mu - 1.0) + b
    lam = lambda_size(r_star)
    return {
        "H": H,
        "sigma_min": smin,
        "minimax_exponent": 2 * H / (d + 2 * H),
        "q": (smin / H) * ((d + 2 * H) / H) * (H / d - b),
        "nu": 0.5 * (a + math.sqrt(a * a + 2 * b)),
        "w": pi_weight(r_star) * lam * math.log(8 * math.e * d * lam),
    }


def proof_epsilon(k: int, cfg: ApproxConfig, p: float, R: float = 1.0) -> float:
    """Threshold ``lambda R 2^(-k d (tau + 1/p))`` used for a target of ``2^(k d)`` cells."""
    H = harmonic_mean(cfg.sigma)
    smin = min(cfg.sigma)
    d = cfg.d
    inv_q = 0.0 if math.isinf(cfg.q) else 1.0 / cfg.q
    tau = H / d - max(1.0 / p - inv_q, 0.0)
    lam = 2.0 ** ((1 + (1 + tau * p) * smin / H) * d / p)
    return lam * R * 2.0 ** (-k * d * (tau + 1.0 / p))


@dataclass
class RateTable:
    rows: list[dict]
    slope: float
    expected_slope: float

    def write_csv(self, path, header: dict | None = None):
        with open(path, "w", newline="") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}: {val}\n")
            w = csv.DictWriter(fh, fieldnames=["epsilon", "cells", "error", "log2_cells", "log2_error"])
            w.writeheader()
            for row in self.rows:
                w.writerow(row)


def fit_slope(x: Iterable[float], y: Iterable[float]) -> float:
    x, y = np.asarray(list(x), float), np.asarray(list(y), float)
    if len(x) < 2 or np.ptp(x) == 0:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def rate_experiment(s: Callable, cfg: ApproxConfig, eps_schedule: Sequence[float]) -> RateTable:
    """Greedy runs over a list of thresholds, with the log-log slope of error vs cells."""
    rows = []
    for eps in eps_schedule:
        res = greedy_partition(s, _replace(cfg, epsilon=eps))
        err = res.total_error
        rows.append({
            "epsilon": eps,
            "cells": res.n_cells,
            "error": err,
            "log2_cells": math.log2(res.n_cells),
            "log2_error": math.log2(err) if err > 0 else float("-inf"),
        })
    good = [r for r in rows if r["error"] > 0]
    slope = fit_slope([r["log2_cells"] for r in good], [r["log2_error"] for r in good])
    return RateTable(rows, slope, -harmonic_mean(cfg.sigma) / cfg.d)


def _replace(cfg: ApproxConfig, **kw) -> ApproxConfig:
    return replace(cfg, **kw)
