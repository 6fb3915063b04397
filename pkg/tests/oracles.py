"""Independent reference implementations used as test oracles.

Nothing here imports the statistics, transport or enumeration code under
test: basis functions come from ``numpy.polynomial.Legendre``, integrals from
``scipy.integrate`` or plain Gauss rules, and partitions from a direct
recursive generator.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from numpy.polynomial import Legendre
from numpy.polynomial.legendre import leggauss


# ---------------------------------------------------------------------------
# Rectangles as exact fractions

def interval(scale: int, pos: int) -> tuple[Fraction, Fraction]:
    return Fraction(pos, 2 ** scale), Fraction(pos + 1, 2 ** scale)


def member(scale, pos, x) -> np.ndarray:
    """Membership with the closed-at-zero, half-open-elsewhere convention."""
    x = np.atleast_2d(np.asarray(x, float))
    ok = np.ones(len(x), bool)
    for l, (j, k) in enumerate(zip(scale, pos)):
        lo, hi = k / 2 ** j, (k + 1) / 2 ** j
        ok &= (x[:, l] <= hi) & ((x[:, l] > lo) if k > 0 else (x[:, l] >= lo))
    return ok


# ---------------------------------------------------------------------------
# Basis

def phi(scale, pos, k, x) -> np.ndarray:
    """``Phi[K, k]`` from the explicit formula with numpy's Legendre class."""
    x = np.atleast_2d(np.asarray(x, float))
    vol = 2.0 ** -sum(scale)
    val = np.full(len(x), math.sqrt(math.prod(2 * kk + 1 for kk in k) / vol))
    for l, (j, p, kk) in enumerate(zip(scale, pos, k)):
        lo, hi = p / 2 ** j, (p + 1) / 2 ** j
        u = (2 * x[:, l] - lo - hi) / (hi - lo)
        val = val * Legendre.basis(kk)(u)
    return val * member(scale, pos, x)


def gauss_box(lo, hi, order):
    t, w = leggauss(order)
    axes = [a + 0.5 * (t + 1) * (b - a) for a, b in zip(lo, hi)]
    wts = [0.5 * w * (b - a) for a, b in zip(lo, hi)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], -1)
    ww = np.ones(1)
    for wl in wts:
        ww = np.multiply.outer(ww, wl).ravel()
    return pts, ww


# ---------------------------------------------------------------------------
# Partitions

def all_partitions(depth: int, d: int) -> list[frozenset]:
    """Every tree-representable dyadic partition, as frozensets of (scale, pos)."""

    def rec(scale, pos):
        out = {frozenset([(scale, pos)])}
        for l in range(d):
            if scale[l] >= depth:
                continue
            s2 = scale[:l] + (scale[l] + 1,) + scale[l + 1:]
            lo = pos[:l] + (2 * pos[l],) + pos[l + 1:]
            hi = pos[:l] + (2 * pos[l] + 1,) + pos[l + 1:]
            for a in rec(s2, lo):
                for b in rec(s2, hi):
                    out.add(a | b)
        return out

    return sorted(rec((0,) * d, (0,) * d), key=lambda p: sorted(p))


def binary_tree_shapes(n_leaves: int) -> int:
    """Number of complete binary tree shapes, by brute-force recursion."""
    if n_leaves == 1:
        return 1
    return sum(binary_tree_shapes(a) * binary_tree_shapes(n_leaves - a) for a in range(1, n_leaves))


# ---------------------------------------------------------------------------
# Estimator quantities, computed directly from the sample

def sigma2_pairwise(vals: np.ndarray) -> float:
    n = len(vals)
    tot = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            tot += (vals[i] - vals[j]) ** 2
    return tot / (n * (n - 1))


def box(r):
    return list(itertools.product(*[range(g + 1) for g in r]))


def all_rects(J: int, d: int):
    for scale in itertools.product(range(J + 1), repeat=d):
        for pos in itertools.product(*[range(2 ** s) for s in scale]):
            yield scale, pos


def m_hats_direct(x, J, r_star):
    n, d = x.shape
    m1 = m2 = 0.0
    for scale, pos in all_rects(J, d):
        vol = 2.0 ** -sum(scale)
        s1 = 0.0
        for k in box(r_star):
            v = phi(scale, pos, k, x)
            pk = math.prod(2 * a + 1 for a in k)
            s1 += math.sqrt(pk / vol) * abs(v.sum())
            m2 = max(m2, float(np.sum(v * v)))
        m1 = max(m1, s1)
    return m1 / n, m2 / n


class DirectCriterion:
    """``W(K, r)`` evaluated from basis values at the sample points."""

    def __init__(self, x, J, r_star, kappa):
        self.x = np.atleast_2d(np.asarray(x, float))
        self.n, self.d = self.x.shape
        self.J, self.r_star, self.kappa = J, tuple(r_star), tuple(kappa)
        lam = math.prod(g + 1 for g in r_star)
        L = math.log(8 * self.d * lam)
        m1, m2 = m_hats_direct(self.x, J, r_star)
        k3, k4, k5 = kappa[2:]
        pi_r = math.prod(2 * g + 1 for g in r_star)
        self.const = L / self.n * ((k3 * m2 + k4 * pi_r) * lam + k5 * m1)
        self._terms = {}

    def term(self, scale, pos, k):
        key = (scale, pos, k)
        if key not in self._terms:
            v = phi(scale, pos, k, self.x)
            s2 = float(v @ v)
            s1 = float(v.sum())
            n = self.n
            sig = (n * s2 - s1 * s1) / (n * (n - 1))
            pk = math.prod(2 * a + 1 for a in k)
            self._terms[key] = -(s1 / n) ** 2 + self.kappa[0] * sig / n + self.kappa[1] * pk / n
        return self._terms[key]

    def W(self, scale, pos, r):
        return sum(self.term(scale, pos, k) for k in box(r)) + self.const

    def best_leaf(self, scale, pos):
        return min(self.W(scale, pos, r) for r in box(self.r_star))


def exhaustive_min(x, J, r_star, kappa, full_product: bool = True) -> float:
    """Minimum of ``sum_K W(K, rho_K)`` over every partition and degree assignment.

    With ``full_product`` all ``|Lambda(r_star)|^|m|`` assignments are visited;
    otherwise each leaf takes its own minimum (valid because the sum is
    separable).
    """
    crit = DirectCriterion(x, J, r_star, kappa)
    d = crit.d
    best = math.inf
    degrees = box(r_star)
    for part in all_partitions(J, d):
        cells = sorted(part)
        if full_product:
            tables = [[crit.W(s, p, r) for r in degrees] for s, p in cells]
            for combo in itertools.product(*tables):
                best = min(best, sum(combo))
        else:
            best = min(best, sum(crit.best_leaf(s, p) for s, p in cells))
    return best


# ---------------------------------------------------------------------------
# Quadrature references

def piecewise_quadrature_l2(f, g, d, level=6, order=8) -> float:
    """``||f - g||_2`` by composite Gauss on a uniform grid of the given level."""
    total = 0.0
    h = 2.0 ** -level
    for idx in itertools.product(range(2 ** level), repeat=d):
        lo = [i * h for i in idx]
        hi = [(i + 1) * h for i in idx]
        pts, w = gauss_box(lo, hi, order)
        diff = f(pts) - g(pts)
        total += float(w @ (diff * diff))
    return math.sqrt(total)
