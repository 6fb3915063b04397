"""Test densities, risk evaluation, oracle comparisons and simulation studies.

Every built-in test density carries an exact piecewise-polynomial form, so
risks, bias terms and basis moments are computed by coefficient algebra
instead of quadrature.  A density without that form falls back on composite
Gauss-Legendre quadrature.

Randomness comes from numpy's counter-based ``Philox`` generator.  Replicate
``i`` of a study seeded with ``seed`` uses ``SeedSequence(seed, spawn_key=(i,))``,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .dyadic import (BudgetExceeded, DyadicRectangle, PartitionTree, enumerate_partitions,
                     grid_tree, harmonic_mean, leaves, tree_from_cells)
from .estimate import (FittedModel, PenaltyConfig, build_stats, degree_order, fit,
                       make_config, select_partition, square_coeffs)
from .legendre import (PiecewisePoly, basis_matrix, gauss_grid, lambda_size, pi_array,
                       project, project_many)

RNG_NAME = "numpy.random.Philox"


def rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional replicate key path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))


# ---------------------------------------------------------------------------
# Test densities

@dataclass(eq=False)
class TestDensity:
    """A density on ``[0,1]^d`` with a closed-form evaluator and a sampler.

    Attributes
    ----------
    kind : {"uniform", "piecewise-poly", "product-smooth", "spike"}
    pdf : callable
        Maps ``(m, d)`` points to ``m`` density values.
    bound : float
        Declared ``||s||_inf``, used as the rejection envelope.
    pieces : PiecewisePoly, optional
        Exact piecewise-polynomial form; enables the exact risk path.
    marginals : list of numpy power-series coefficient arrays, optional
        Per-axis polynomial marginals of a product density.
    sigma : tuple of float, optional
        Declared smoothness, used by rate studies.
    """

    __test__ = False  # keeps pytest from collecting the class

    kind: str
    d: int
    pdf: Callable
    bound: float
    name: str = ""
    pieces: PiecewisePoly | None = None
    marginals: list | None = None
    sigma: tuple | None = None

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.pdf(np.atleast_2d(np.asarray(x, float))), float)

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        return sample_density(self, n, seed)

    def norm2(self, quad_order: int = 10, level: int = 6) -> float:
        """``||s||_2^2``, exact when ``pieces`` is available."""
        if self.pieces is not None:
            return self.pieces.norm2()
        return _composite(lambda x: self(x) ** 2, DyadicRectangle.unit(self.d), quad_order, level)

    def mass(self) -> float:
        if self.pieces is not None:
            return float(sum(c.flat[0] * math.sqrt(K.volume)
                             for K, c in zip(self.pieces.cells, self.pieces.coeffs)))
        return _composite(self, DyadicRectangle.unit(self.d), 10, 6)

    def sup_norm(self, grid: int = 33) -> float:
        """Largest value found on a closed grid in every leaf (or on ``[0,1]^d``)."""
        cells = self.pieces.cells if self.pieces is not None else [DyadicRectangle.unit(self.d)]
        g = grid if self.d <= 2 else 9
        pts = np.concatenate([_closed_grid(K, g) for K in cells])
        vals = self.pieces(pts) if self.pieces is not None else self(pts)
        return float(np.max(np.abs(vals)))

    def check(self, tol: float = 1e-8) -> None:
        """Raise ``ValueError`` unless ``s`` is a bounded density."""
        m = self.mass()
        if abs(m - 1.0) > tol:
            raise ValueError(f"{self.name or self.kind}: integrates to {m!r}, not 1")
        cells = self.pieces.cells if self.pieces is not None else [DyadicRectangle.unit(self.d)]
        pts = np.concatenate([_closed_grid(K, 9 if self.d <= 2 else 5) for K in cells])
        vals = self(pts)
        if np.min(vals) < -1e-12:
            raise ValueError(f"{self.name or self.kind}: negative at {pts[np.argmin(vals)]}")
        if self.sup_norm() > self.bound * (1 + 1e-9):
            raise ValueError(f"{self.name or self.kind}: exceeds its declared bound {self.bound}")


def _closed_grid(K: DyadicRectangle, g: int) -> np.ndarray:
    axes = [np.linspace(a, b, g) for a, b in zip(K.lower, K.upper)]
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)


def uniform(d: int = 1) -> TestDensity:
    pieces = PiecewisePoly(grid_tree((0,) * d), d, (np.ones((1,) * d),))
    return TestDensity("uniform", d, lambda x: np.ones(len(x)), 1.0, "uniform", pieces,
                       sigma=(math.inf,) * d)


def from_pieces(pieces: PiecewisePoly, name: str = "piecewise", kind: str = "piecewise-poly",
                sigma: Sequence[float] | None = None, bound: float | None = None) -> TestDensity:
    """Wrap a nonnegative piecewise polynomial of unit mass as a test density."""
    dens = TestDensity(kind, pieces.d, pieces, math.inf, name, pieces,
                       sigma=None if sigma is None else tuple(sigma))
    dens.bound = bound if bound is not None else dens.sup_norm(grid=65)
    dens.check()
    return dens


def step_density(values: Sequence[float] = (1.6, 0.4), d: int = 1) -> TestDensity:
    """Piecewise constant along axis 1 with a jump at 1/2, flat in other axes."""
    a, b = values
    if min(a, b) < 0 or abs(0.5 * (a + b) - 1) > 1e-12:
        raise ValueError("values must be nonnegative with mean 1")
    tree = grid_tree((1,) + (0,) * (d - 1))
    pieces = PiecewisePoly(tree, d, (np.full((1,) * d, a * 2 ** -0.5), np.full((1,) * d, b * 2 ** -0.5)))
    return from_pieces(pieces, f"step({a:g},{b:g})", bound=max(a, b), sigma=(0.5,) + (math.inf,) * (d - 1))


def _tent(t):
    return np.abs(t - np.round(t))


def takagi(levels: int = 12, amplitude: float = 1.5, offset: int = 0) -> TestDensity:
    """``1 + a (T - mean T)`` with ``T(x) = sum_{k < levels} 2^-k dist(2^(k + offset) x, Z)``.

    ``T`` is linear on every cell of level ``levels + offset`` and has
    smoothness 1 on all coarser scales; a positive ``offset`` raises the
    semi-norm by ``2^offset``.  ``a <= 2`` keeps the density positive.
    """
    ks = np.arange(levels)
    mean_T = 0.25 * float(np.sum(2.0 ** -ks))

    def pdf(x):
        t = np.asarray(x)[:, 0]
        T = sum(2.0 ** -k * _tent(np.ldexp(t, int(k + offset))) for k in ks)
        return 1.0 + amplitude * (T - mean_T)

    tree = grid_tree((levels + offset,))
    cells = leaves(tree, 1)
    coefs, _ = project_many(pdf, cells, (1,), 3)
    pieces = PiecewisePoly(tree, 1, tuple(coefs))
    max_T = 2.0 / 3.0
    bound = 1.0 + amplitude * (max_T - mean_T)
    dens = TestDensity("piecewise-poly", 1, pdf, bound,
                       f"takagi({levels},{amplitude:g},{offset})", pieces, sigma=(1.0,))
    dens.check()
    return dens


def _bump_pieces(center: int, level: int) -> list[tuple[DyadicRectangle, np.ndarray]]:
    """Legendre coefficients of ``(15/16)(1 - t^2)^2 / h`` on the two cells around ``center 2^-level``."""
    h = 2.0 ** -level

    def bump(x):
        t = (np.asarray(x)[:, 0] - center * h) / h
        return np.where(np.abs(t) < 1, 15 / 16 * (1 - t * t) ** 2, 0.0) / h

    out = []
    for pos in (center - 1, center):
        K = DyadicRectangle((level,), (pos,))
        out.append((K, project(bump, K, (4,), 6)))
    return out


def spike(d: int = 1, weight: float = 0.3, level: int = 4, center: int = 5) -> TestDensity:
    """Flat density plus a localized polynomial bump of half-width ``2^-level``.

    The bump is ``prod_l (15/16)(1 - t_l^2)^2 / h`` with ``t_l = (x_l - c)/h`` and
    ``c = center 2^-level`` on every axis.
    """
    if not 0 <= weight <= 1:
        raise ValueError("weight must lie in [0, 1]")
    if not 1 <= center < 2 ** level:
        raise ValueError("center must be an interior grid point")
    h = 2.0 ** -level
    c = center * h
    one_d = _bump_pieces(center, level)

    def pdf(x):
        x = np.asarray(x)
        t = (x - c) / h
        b = np.where(np.abs(t) < 1, 15 / 16 * (1 - t * t) ** 2, 0.0) / h
        return (1 - weight) + weight * np.prod(b, axis=1)

    cells, coeffs = [], []
    for combo in itertools.product(one_d, repeat=d):
        K = DyadicRectangle(tuple(k.scale[0] for k, _ in combo), tuple(k.pos[0] for k, _ in combo))
        c_k = combo[0][1]
        for _, cl in combo[1:]:
            c_k = np.multiply.outer(c_k, cl)
        cells.append(K)
        coeffs.append(weight * c_k)
    # fill the rest of the cube with cells of the grid that contains the bump support
    tree = _tree_around(cells, d, level)
    full = []
    for K in leaves(tree, d):
        c_k = np.zeros((5,) * d)
        c_k.flat[0] = (1 - weight) * math.sqrt(K.volume)
        if K in cells:
            c_k = c_k + coeffs[cells.index(K)]
        full.append(c_k)
    pieces = PiecewisePoly(tree, d, tuple(full))
    bound = (1 - weight) + weight * (15 / 16 / h) ** d
    dens = TestDensity("spike", d, pdf, bound, f"spike(d={d},w={weight:g})", pieces)
    dens.check()
    return dens


def _tree_around(cells: Sequence[DyadicRectangle], d: int, level: int) -> PartitionTree:
    """Coarsest tree whose leaves include ``cells``, cutting axes in turn."""
    targets = set(cells)

    def build(K: DyadicRectangle):
        if K in targets:
            return ("leaf", K)
        if not any(K.contains_rect(T) for T in targets):
            return ("leaf", K)
        axis = min(range(d), key=lambda l: (K.scale[l], l))
        lo_s = list(K.scale)
        lo_s[axis] += 1
        lo_p, hi_p = list(K.pos), list(K.pos)
        lo_p[axis] = 2 * K.pos[axis]
        hi_p[axis] = 2 * K.pos[axis] + 1
        return ("node", build(DyadicRectangle(tuple(lo_s), tuple(lo_p))),
                build(DyadicRectangle(tuple(lo_s), tuple(hi_p))))

    out = []

    def collect(t):
        if t[0] == "leaf":
            out.append(t[1])
        else:
            collect(t[1])
            collect(t[2])

    collect(build(DyadicRectangle.unit(d)))
    return tree_from_cells(out, d)


def bernstein_marginal(weights: Sequence[float]) -> np.ndarray:
    """Power-series coefficients of ``sum_i w_i Beta(i + 1, m - i + 1)`` with ``m = len(w) - 1``."""
    w = np.asarray(weights, float)
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    m = len(w) - 1
    out = np.zeros(m + 1)
    for i, wi in enumerate(w):
        term = P.polymul(P.polypow([0, 1], i), P.polypow([1, -1], m - i))
        out[:len(term)] += wi * (m + 1) * math.comb(m, i) * term
    return out


def product_smooth(marginal_weights: Sequence[Sequence[float]]) -> TestDensity:
    """Product of Bernstein polynomial-mixture marginals; a single polynomial piece."""
    margs = [bernstein_marginal(w) for w in marginal_weights]
    d = len(margs)

    def pdf(x):
        x = np.asarray(x)
        return np.prod([P.polyval(x[:, l], c) for l, c in enumerate(margs)], axis=0)

    root = DyadicRectangle.unit(d)
    deg = tuple(len(c) - 1 for c in margs)
    coef = project(pdf, root, deg, max(deg) + 2)
    pieces = PiecewisePoly(grid_tree((0,) * d), d, (coef,))
    # a Bernstein mixture is bounded by (m + 1) max_i w_i
    bound = float(np.prod([len(w) * max(w) for w in marginal_weights]))
    dens = TestDensity("product-smooth", d, pdf, bound, f"product(d={d})", pieces,
                       marginals=margs, sigma=(math.inf,) * d)
    dens.check()
    return dens


SUITE = {
    "uniform": lambda d: uniform(d),
    "step": lambda d: step_density(d=d),
    "takagi": lambda d: takagi(9, 1.75, 3),
    "spike": lambda d: spike(d),
    "product": lambda d: product_smooth([[0.1, 0.5, 0.2, 0.2]] * d),
}


def builtin_density(name: str, d: int = 1) -> TestDensity:
    try:
        make = SUITE[name]
    except KeyError:
        raise KeyError(f"unknown density {name!r}; choose from {sorted(SUITE)}") from None
    dens = make(d)
    if dens.d != d:
        raise ValueError(f"density {name!r} is only available for d={dens.d}")
    return dens


# ---------------------------------------------------------------------------
# Sampling

def _inverse_cdf(coef: np.ndarray, u: np.ndarray, iters: int = 60) -> np.ndarray:
    cdf = P.polyint(coef)
    lo, hi = np.zeros_like(u), np.ones_like(u)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = P.polyval(mid, cdf) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_density(density: TestDensity, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """``n`` i.i.d. draws from ``density`` as an ``(n, d)`` array.

    Product densities use the inverse CDF on every axis; everything else uses
    rejection from the uniform envelope ``bound * 1``.
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    g = seed if isinstance(seed, np.random.Generator) else rng(int(seed))
    d = density.d
    if density.marginals is not None:
        u = g.random((n, d))
        return np.stack([_inverse_cdf(c, u[:, l]) for l, c in enumerate(density.marginals)], axis=1)
    out = np.empty((n, d))
    filled = 0
    while filled < n:
        m = max(64, int(1.2 * (n - filled) * density.bound) + 16)
        x = g.random((m, d))
        v = density(x)
        if np.any(v > density.bound * (1 + 1e-9)):
            raise ValueError(f"{density.name}: value {v.max():.6g} exceeds the envelope {density.bound:.6g}")
        keep = x[g.random(m) * density.bound < v]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


# ---------------------------------------------------------------------------
# Exact moments and risks

def _composite(f: Callable, K: DyadicRectangle, order: int, level: int,
               max_nodes: int = 5_000_000) -> float:
    """Composite tensor Gauss-Legendre integral of ``f`` over ``K``."""
    sub = [max(s, level) for s in K.scale]
    counts = [1 << (s - k) for s, k in zip(sub, K.scale)]
    total_nodes = math.prod(counts) * order ** K.d
    if total_nodes > max_nodes:
        raise BudgetExceeded(f"quadrature needs {total_nodes} nodes (budget {max_nodes})")
    ref = DyadicRectangle(tuple(sub), (0,) * K.d)
    nodes, w = gauss_grid(ref, order)
    base = np.array([p << (s - k) for p, s, k in zip(K.pos, sub, K.scale)])
    offs = np.stack([m.ravel() for m in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")], -1)
    shifts = (base + offs) * ref.widths
    pts = (shifts[:, None, :] + nodes[None]).reshape(-1, K.d)
    return float(np.sum(np.asarray(f(pts)).reshape(len(shifts), -1) @ w))


def basis_moments(truth: TestDensity, K: DyadicRectangle, rho: Sequence[int],
                  quad_order: int = 10, level: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """``E Phi[K, k](Y)`` and ``E Phi[K, k](Y)^2`` for ``k <= rho`` under ``truth``.

    Uses ``Phi_k^2 = (pi(k)/|K|) prod_l sum_b C[k_l, b] Q_b(u_l)`` and the exact
    inner products ``<s, Phi[K, b]>`` up to degree ``2 rho``.
    """
    rho = tuple(rho)
    two = tuple(2 * g for g in rho)
    if truth.pieces is not None:
        a2, _ = truth.pieces.inner_products(K, two)
    else:
        a2 = _quad_inner(truth, K, two, quad_order, level)
    a2 = np.asarray(a2)
    mean = a2[tuple(slice(0, g + 1) for g in rho)].copy()
    # <s, prod Q_b>  =  sqrt(|K| / pi(b)) <s, Phi_b>
    vol = K.volume
    raw = a2 * np.sqrt(vol / pi_array(two))
    sq = raw
    for l, g in enumerate(rho):
        sq = np.moveaxis(np.tensordot(square_coeffs(g), sq, axes=([1], [l])), 0, l)
    second = pi_array(rho) / vol * sq
    return mean, second


def _quad_inner(truth: TestDensity, K: DyadicRectangle, rho, order: int, level: int) -> np.ndarray:
    shape = tuple(g + 1 for g in rho)
    # every basis function in one pass over the composite grid
    sub = [max(s, level) for s in K.scale]
    counts = [1 << (s - k) for s, k in zip(sub, K.scale)]
    ref = DyadicRectangle(tuple(sub), (0,) * K.d)
    nodes, w = gauss_grid(ref, max(order, max(rho) + 2))
    base = np.array([p << (s - k) for p, s, k in zip(K.pos, sub, K.scale)])
    offs = np.stack([m.ravel() for m in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")], -1)
    shifts = (base + offs) * ref.widths
    if len(shifts) * len(nodes) > 5_000_000:
        raise BudgetExceeded("quadrature budget exceeded")
    pts = (shifts[:, None, :] + nodes[None]).reshape(-1, K.d)
    vals = basis_matrix(K, rho, pts, mask=False) * truth(pts)[:, None]
    out = np.einsum("cmk,m->k", vals.reshape(len(shifts), len(nodes), -1), w)
    return out.reshape(shape)


def model_terms(truth: TestDensity, K: DyadicRectangle, rho: Sequence[int], n: int) -> tuple[float, float]:
    """Per-leaf ``(sum_k a_k^2, sum_k Var Phi_k)`` for the degree box ``rho`` on ``K``."""
    mean, second = basis_moments(truth, K, rho)
    return float(np.sum(mean ** 2)), float(np.sum(second - mean ** 2))


def fixed_model_risk(truth: TestDensity, cells: Sequence[DyadicRectangle],
                     degrees: Sequence[Sequence[int]], n: int) -> dict:
    """Exact ``E ||s - s_hat||^2`` of the projection estimator on a fixed model.

    Returns the bias ``||s - s_m||^2``, the variance sum ``(1/n) sum Var``, and
    their total.
    """
    s2 = truth.norm2()
    energy = var = 0.0
    for K, rho in zip(cells, degrees):
        e, v = model_terms(truth, K, rho, n)
        energy += e
        var += v
    bias = max(s2 - energy, 0.0)
    return {"bias": bias, "variance": var / n, "risk": bias + var / n}


def fixed_model_fit(sample, tree: PartitionTree, degrees: Sequence[Sequence[int]]) -> PiecewisePoly:
    """Projection estimator with coefficients ``(1/n) sum_i Phi[K, k](Y_i)`` on a fixed model."""
    x = np.atleast_2d(np.asarray(sample, float))
    d = x.shape[1]
    cells = leaves(tree, d)
    coeffs = []
    for K, rho in zip(cells, degrees):
        B = basis_matrix(K, rho, x)
        coeffs.append(B.mean(axis=0).reshape([g + 1 for g in rho]))
    return PiecewisePoly(tree, d, tuple(coeffs))


def exact_risk(model: FittedModel | PiecewisePoly, truth: TestDensity,
               quad_order: int = 10, level: int = 6) -> float:
    """``||s - model||_2^2``.

    Piecewise-polynomial truths use exact inner products on every model leaf.
    Other truths use composite Gauss quadrature of order ``quad_order`` on
    cells of scale at least ``level`` per axis.
    """
    pp = model.density if isinstance(model, FittedModel) else model
    if truth.pieces is not None:
        total = truth.pieces.norm2()
        for K, c in zip(pp.cells, pp.coeffs):
            a, _ = truth.pieces.inner_products(K, [s - 1 for s in c.shape])
            total += float(np.sum(c * c) - 2.0 * np.sum(c * a))
        return max(total, 0.0)
    return quadrature_risk(pp, truth, quad_order, level)[0]


def quadrature_risk(pp: PiecewisePoly, truth: TestDensity, quad_order: int = 10,
                    level: int = 6) -> tuple[float, int, int]:
    """Risk by composite quadrature; returns ``(risk, order, number of nodes)``."""
    total, nodes = 0.0, 0
    for K in pp.cells:
        total += _composite(lambda x: (truth(x) - pp(x)) ** 2, K, quad_order, level)
        nodes += math.prod(1 << max(0, level - s) for s in K.scale) * quad_order ** pp.d
    return total, quad_order, nodes


# ---------------------------------------------------------------------------
# Oracle

@dataclass
class OracleResult:
    tree: PartitionTree
    degrees: list[tuple[int, ...]]
    risk: float
    n_models: int
    bias: float
    variance: float


def oracle_risk(truth: TestDensity, n: int, config: PenaltyConfig,
                budget: int = 200_000) -> OracleResult:
    """Smallest exact risk over every enumerated partition and degree assignment.

    The risk of ``(m, rho)`` is ``||s||^2 + sum_K c(K, rho_K)`` with
    ``c(K, r) = sum_{k <= r} (Var Phi_k / n - a_k^2)``, so each leaf takes its
    own best degree and the search is over partitions only.
    """
    d, J = truth.d, config.J_star
    if config.d != d:
        raise ValueError("config and truth dimensions differ")
    order = degree_order(config.r_star)
    cache: dict = {}

    def best(K):
        hit = cache.get(K)
        if hit is None:
            vals = []
            for r in order:
                e, v = model_terms(truth, K, r, n)
                vals.append((v / n - e, e, v / n))
            i = min(range(len(vals)), key=lambda t: vals[t][0])
            hit = cache[K] = (order[i], vals[i])
        return hit

    s2 = truth.norm2()
    best_val, best_tree, count = math.inf, None, 0
    for tree in enumerate_partitions(J, d, budget=budget):
        count += 1
        v = sum(best(K)[1][0] for K in leaves(tree, d))
        if v < best_val - 1e-15:
            best_val, best_tree = v, tree
    cells = leaves(best_tree, d)
    degs = [best(K)[0] for K in cells]
    energy = sum(best(K)[1][1] for K in cells)
    var = sum(best(K)[1][2] for K in cells)
    return OracleResult(best_tree, degs, max(s2 + best_val, 0.0), count,
                        max(s2 - energy, 0.0), var)


def oracle_dp(truth: TestDensity, n: int, config: PenaltyConfig) -> float:
    """Exact oracle risk over all of ``D_star`` by dynamic programming.

    The expected risk is additive over leaves, so the bottom-up recursion used
    for selection also minimizes it; no enumeration budget applies.
    """
    d, J = truth.d, config.J_star
    order = degree_order(config.r_star)
    best: dict = {}
    for s in sorted(itertools.product(range(J + 1), repeat=d), key=lambda s: (-sum(s), s)):
        for pos in itertools.product(*[range(1 << sl) for sl in s]):
            K = DyadicRectangle(s, pos)
            v = math.inf
            for r in order:
                e, var = model_terms(truth, K, r, n)
                v = min(v, var / n - e)
            for l in range(d):
                if s[l] < J:
                    cs = s[:l] + (s[l] + 1,) + s[l + 1:]
                    lo = pos[:l] + (2 * pos[l],) + pos[l + 1:]
                    hi = pos[:l] + (2 * pos[l] + 1,) + pos[l + 1:]
                    v = min(v, best[(cs, lo)] + best[(cs, hi)])
            best[(s, pos)] = v
    root = (0,) * d
    return max(truth.norm2() + best[(root, root)], 0.0)


# ---------------------------------------------------------------------------
# Replicated studies

@dataclass
class RiskReport:
    risks: np.ndarray
    n: int
    config: dict
    seed: int
    density: str = ""
    oracle: float | None = None
    cells: np.ndarray | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.risks))

    @property
    def se(self) -> float:
        return float(np.std(self.risks, ddof=1) / math.sqrt(len(self.risks))) if len(self.risks) > 1 else math.nan

    @property
    def ratio(self) -> float | None:
        if self.oracle is None:
            return None
        return math.inf if self.oracle <= 0 else self.mean / self.oracle

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            _header(fh, {"density": self.density, "n": self.n, "seed": self.seed, "rng": RNG_NAME,
                         "config": self.config, **(header or {})})
            w = csv.writer(fh)
            w.writerow(["n", "replicate", "risk"])
            for i, r in enumerate(self.risks):
                w.writerow([self.n, i, repr(float(r))])


def _header(fh, items: dict) -> None:
    for key, val in items.items():
        fh.write(f"# {key}: {val}\n")


def _map(fn: Callable, jobs: Sequence, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def replicate_risks(truth: TestDensity, n: int, config: PenaltyConfig, replicates: int,
                    seed: int = 0, threads: int = 1, key: int = 0) -> RiskReport:
    """Fit ``replicates`` independent samples and record their exact risks."""
    def job(i):
        x = sample_density(truth, n, rng(seed, key, i))
        model = fit(x, config)
        return exact_risk(model, truth), model.n_cells

    out = _map(job, list(range(replicates)), threads)
    return RiskReport(np.array([o[0] for o in out]), n, config.to_dict(), seed, truth.name,
                      cells=np.array([o[1] for o in out]))


@dataclass
class RateStudy:
    reports: list[RiskReport]
    slope: float
    expected_slope: float
    seed: int
    oracle: list[float] | None = None
    oracle_slope: float | None = None

    @property
    def rows(self) -> list[dict]:
        return [{"n": r.n, "mean": r.mean, "se": r.se, "mean_cells": float(np.mean(r.cells))}
                for r in self.reports]

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            _header(fh, {"seed": self.seed, "rng": RNG_NAME, **(header or {})})
            w = csv.writer(fh)
            w.writerow(["n", "mean", "se", "oracle", "slope", "expected_slope"])
            for i, r in enumerate(self.rows):
                orc = repr(self.oracle[i]) if self.oracle else ""
                w.writerow([r["n"], repr(r["mean"]), repr(r["se"]), orc, repr(self.slope),
                            repr(self.expected_slope)])


def minimax_slope(sigma: Sequence[float], d: int) -> float:
    """``-2H / (d + 2H)``, the log-log slope of the minimax risk in ``n``."""
    if all(math.isinf(s) for s in sigma):
        return -1.0
    H = harmonic_mean(sigma)
    return -2 * H / (d + 2 * H)


def rate_study(truth: TestDensity, n_schedule: Sequence[int], replicates: int = 50,
               seed: int = 0, threads: int = 1, sigma: Sequence[float] | None = None,
               with_oracle: bool = False, **config_kw) -> RateStudy:
    """Mean exact risk over ``replicates`` fits for each ``n``, and the fitted log-log slope.

    ``config_kw`` goes to :func:`make_config` for each ``n``.  With
    ``with_oracle`` the exact oracle risks from :func:`oracle_dp` and their
    slope are reported too.
    """
    sigma = tuple(sigma) if sigma is not None else truth.sigma
    if sigma is None:
        raise ValueError("the truth needs a declared smoothness")
    reports = []
    for i, n in enumerate(n_schedule):
        cfg = make_config(n, truth.d, **config_kw)
        reports.append(replicate_risks(truth, n, cfg, replicates, seed, threads, key=i))
    logs_n = np.log2([r.n for r in reports])
    logs_r = np.log2([r.mean for r in reports])
    slope = float(np.polyfit(logs_n, logs_r, 1)[0]) if len(reports) > 1 else math.nan
    study = RateStudy(reports, slope, minimax_slope(sigma, truth.d), seed)
    if with_oracle:
        study.oracle = [oracle_dp(truth, r.n, make_config(r.n, truth.d, **config_kw)) for r in reports]
        if len(reports) > 1:
            study.oracle_slope = float(np.polyfit(logs_n, np.log2(study.oracle), 1)[0])
    return study


@dataclass
class Calibration:
    grid: list[tuple[float, ...]]
    ratios: np.ndarray          # (len(grid), len(densities))
    densities: list[str]
    oracles: list[float]
    best: tuple[float, ...]
    seed: int

    @property
    def mean_ratio(self) -> np.ndarray:
        return self.ratios.mean(axis=1)

    def write_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            _header(fh, {"seed": self.seed, "rng": RNG_NAME, "best": self.best, **(header or {})})
            w = csv.writer(fh)
            w.writerow(["k1", "k2", "k3", "k4", "k5"] + [f"ratio_{d}" for d in self.densities] + ["mean_ratio"])
            for kap, row, m in zip(self.grid, self.ratios, self.mean_ratio):
                w.writerow(list(kap) + [repr(float(v)) for v in row] + [repr(float(m))])


def calibrate(kappa_grid: Sequence[Sequence[float]], suite: Sequence[TestDensity], n: int,
              replicates: int = 20, seed: int = 0, J_star: int | None = None,
              r_star: Sequence[int] | None = None, threads: int = 1) -> Calibration:
    """Pick the ``kappa`` with the smallest mean fitted/oracle risk ratio over ``suite``.

    Every grid point sees the same samples, so the statistics are built once
    per sample and only the selection is repeated.  Densities whose oracle risk
    is zero are rejected because their ratio is undefined.
    """
    grid = [tuple(float(v) for v in k) for k in kappa_grid]
    if not grid:
        raise ValueError("empty kappa grid")
    ratios = np.zeros((len(grid), len(suite)))
    oracles = []
    for j, truth in enumerate(suite):
        base = make_config(n, truth.d, r_star=r_star, J_star=J_star)
        orc = oracle_dp(truth, n, base)
        if orc <= 0:
            raise ValueError(f"{truth.name}: oracle risk is zero, the ratio is undefined")
        oracles.append(orc)

        def job(i, truth=truth, base=base):
            x = sample_density(truth, n, rng(seed, j, i))
            stats = build_stats(x, base)
            return [exact_risk(select_partition(stats, replace(base, kappa=k)), truth) for k in grid]

        risks = np.array(_map(job, list(range(replicates)), threads))  # (reps, grid)
        ratios[:, j] = risks.mean(axis=0) / orc
    best = grid[int(np.argmin(ratios.mean(axis=1)))]
    return Calibration(grid, ratios, [t.name for t in suite], oracles, best, seed)


def oracle_suite(d: int = 1) -> list[TestDensity]:
    """Densities with a positive oracle risk used for calibration and the ratio check."""
    if d == 1:
        return [step_density(), takagi(8), spike(1), product_smooth([[0.1, 0.5, 0.2, 0.2]])]
    return [step_density(d=d), spike(d, level=2, center=1), product_smooth([[0.1, 0.5, 0.2, 0.2]] * d)]


__all__ = [
    "RNG_NAME", "rng", "TestDensity", "uniform", "from_pieces", "step_density", "takagi", "spike",
    "bernstein_marginal", "product_smooth", "SUITE", "builtin_density", "sample_density",
    "basis_moments", "model_terms", "fixed_model_risk", "fixed_model_fit", "exact_risk",
    "quadrature_risk", "OracleResult", "oracle_risk", "oracle_dp", "RiskReport", "replicate_risks",
    "RateStudy", "minimax_slope", "rate_study", "Calibration", "calibrate", "oracle_suite",
]
