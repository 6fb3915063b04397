"""Penalized least-squares density estimation over dyadic piecewise polynomials.

The selection runs in six steps: variance proxies ``M1`` and ``M2``, the
U-statistic variances ``sigma_hat^2``, the best degree ``r_hat_K`` and its
criterion ``W(K, r_hat_K)`` for every rectangle of ``D_star``, a bottom-up
dynamic program for the best partition, and the projection coefficients on
the selected leaves.

Sufficient statistics
---------------------
For every rectangle ``K`` with all axis scales ``<= J_star`` we keep the
Legendre moments ``G[K, a] = sum_{Y_i in K} prod_l Q_{a_l}(u_l(Y_i))`` for
``a <= 2 r_star``, where ``u`` are the coordinates of ``Y_i`` rescaled to
``[-1, 1]^d`` on ``K``.  They are accumulated once on the finest grid and then
merged up the scale lattice with fixed per-axis matrices.  Both
``sum_i Phi[K, k](Y_i)`` and ``sum_i Phi[K, k](Y_i)^2`` are linear in ``G``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .dyadic import (DyadicRectangle, Leaf, Node, PartitionTree, decode_tree,
                     encode_tree, leaves, locate, n_leaves)
from .legendre import (PiecewisePoly, _gauss, lambda_size, legendre_table,
                       pi_array, pi_weight)

log = logging.getLogger(__name__)

DEFAULT_KAPPA = (6.0, 0.5, 0.02, 0.02, 0.02)


# ---------------------------------------------------------------------------
# Configuration

def compute_Jstar(n: int, r_star: Sequence[int], d: int) -> int:
    """Largest ``J`` with ``2^(J d) <= n / log(n |Lambda(r_star)|)``."""
    if n < 4:
        raise ValueError("n must be at least 4")
    bound = n / math.log(n * lambda_size(r_star))
    if bound < 1:
        warnings.warn(f"n={n} is too small for any dyadic refinement; using J_star=0")
        return 0
    J = 0
    while 2.0 ** ((J + 1) * d) <= bound:
        J += 1
    return J


def log_rstar(n: int, d: int) -> tuple[int, ...]:
    """The growing-degree preset ``r_star_l = floor(log n)``."""
    return (int(math.floor(math.log(n))),) * d


@dataclass(frozen=True)
class PenaltyConfig:
    r_star: tuple[int, ...]
    J_star: int
    kappa: tuple[float, ...] = DEFAULT_KAPPA

    def __post_init__(self):
        object.__setattr__(self, "r_star", tuple(int(r) for r in self.r_star))
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))
        if len(self.kappa) != 5:
            raise ValueError("kappa needs five constants")
        if any(k < 0 for k in self.kappa):
            raise ValueError("penalty constants must be nonnegative")
        if any(r < 0 for r in self.r_star) or self.J_star < 0:
            raise ValueError("r_star and J_star must be nonnegative")

    @property
    def d(self) -> int:
        return len(self.r_star)

    @property
    def lam(self) -> int:
        return lambda_size(self.r_star)

    @property
    def weight(self) -> float:
        return math.log(8 * self.d * self.lam)

    def hypothesis_warnings(self, n: int) -> list[str]:
        out = []
        if self.lam > max(math.exp(min(n, 700)) / n, n ** self.d):
            out.append("|Lambda(r_star)| exceeds max(e^n/n, n^d)")
        if 2.0 ** (self.d * self.J_star) > n / math.log(n * self.lam):
            out.append("2^(d J_star) exceeds n / log(n |Lambda(r_star)|)")
        return out

    def to_dict(self) -> dict:
        return {"r_star": list(self.r_star), "J_star": self.J_star, "kappa": list(self.kappa)}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltyConfig":
        return cls(tuple(d["r_star"]), int(d["J_star"]), tuple(d["kappa"]))


def make_config(n: int, d: int, r_star: Sequence[int] | str | None = None,
                kappa: Sequence[float] | None = None,
                J_star: int | str | None = None) -> PenaltyConfig:
    """Fill in defaults: ``r_star`` of all ones (or ``"log"``) and the automatic ``J_star``."""
    if r_star is None or r_star == "constant":
        r_star = (1,) * d
    elif r_star == "log":
        r_star = log_rstar(n, d)
    r_star = tuple(int(r) for r in r_star)
    if len(r_star) != d:
        raise ValueError(f"r_star must have {d} entries")
    if J_star is None or J_star == "auto":
        J_star = compute_Jstar(n, r_star, d)
    return PenaltyConfig(r_star, int(J_star), tuple(kappa) if kappa is not None else DEFAULT_KAPPA)


def as_sample(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("sample must be an (n, d) array")
    if len(x) < 4:
        raise ValueError(f"need at least 4 points, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    bad = np.flatnonzero(np.any((x < 0) | (x > 1), axis=1))
    if len(bad):
        raise ValueError(f"point {bad[0]} lies outside [0, 1]^d")
    return x


# ---------------------------------------------------------------------------
# Fixed one-dimensional tables

@lru_cache(maxsize=None)
def moment_merge(deg: int) -> tuple[np.ndarray, np.ndarray]:
    """``M[a, b]`` with ``Q_a((u -/+ 1) / 2) = sum_b M[a, b] Q_b(u)`` for the lower/upper half."""
    t, w = _gauss(deg + 1)
    Q = legendre_table(deg, t)
    mats = []
    for sign in (-1.0, 1.0):
        P = legendre_table(deg, 0.5 * (t + sign))
        M = (P * w[:, None]).T @ Q * ((2 * np.arange(deg + 1) + 1) / 2.0)
        M[np.abs(M) < 1e-15] = 0.0
        M[0, 0] = 1.0  # keeps merged counts exact
        mats.append(M)
    return mats[0], mats[1]


@lru_cache(maxsize=None)
def square_coeffs(r: int) -> np.ndarray:
    """``C[k, b]`` with ``Q_k^2 = sum_b C[k, b] Q_b``, shape ``(r + 1, 2 r + 1)``."""
    C = np.zeros((r + 1, 2 * r + 1))
    for k in range(r + 1):
        e = np.zeros(k + 1)
        e[k] = 1.0
        sq = npleg.legmul(e, e)
        C[k, :len(sq)] = sq
    return C


def _apply_axis(M: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(M, arr, axes=([1], [axis])), 0, axis)


# ---------------------------------------------------------------------------
# Statistics

def _scales(J: int, d: int) -> list[tuple[int, ...]]:
    """All scale vectors of ``D_star``, finest first."""
    out = list(itertools.product(range(J + 1), repeat=d))
    out.sort(key=lambda s: (-sum(s), s))
    return out


@dataclass
class CellStats:
    """Per-rectangle sufficient statistics over ``D_star``.

    ``moments[s]`` has shape ``(2^s_1, ..., 2^s_d, 2 r_1 + 1, ..., 2 r_d + 1)``;
    ``S1[s]`` and ``S2[s]`` have shape ``(2^s_1, ..., 2^s_d, r_1 + 1, ..., r_d + 1)``.
    """

    n: int
    d: int
    J: int
    r_star: tuple[int, ...]
    moments: dict
    S1: dict = field(default_factory=dict)
    S2: dict = field(default_factory=dict)

    @property
    def scales(self) -> list[tuple[int, ...]]:
        return _scales(self.J, self.d)

    def n_rectangles(self) -> int:
        return (2 ** (self.J + 1) - 1) ** self.d

    def _check(self, K: DyadicRectangle):
        if K.d != self.d or max(K.scale) > self.J:
            raise ValueError(f"{K} is not in D_star (J_star={self.J})")

    def count(self, K: DyadicRectangle) -> float:
        self._check(K)
        return float(self.moments[K.scale][K.pos + (0,) * self.d])

    def phi_sums(self, K: DyadicRectangle, k: Sequence[int]) -> tuple[float, float]:
        self._check(K)
        if any(a > b for a, b in zip(k, self.r_star)):
            raise ValueError(f"degree {tuple(k)} exceeds r_star {self.r_star}")
        idx = K.pos + tuple(k)
        return float(self.S1[K.scale][idx]), float(self.S2[K.scale][idx])


def build_stats(sample, config: PenaltyConfig, chunk: int = 1 << 16) -> CellStats:
    """Accumulate the Legendre moments of every rectangle in ``D_star``."""
    x = as_sample(sample)
    n, d = x.shape
    if d != config.d:
        raise ValueError(f"sample has {d} columns, config expects {config.d}")
    J, r = config.J_star, config.r_star
    A = [2 * rl + 1 for rl in r]
    ncell = 1 << (J * d)
    flat = np.zeros((ncell, math.prod(A)))
    for start in range(0, n, chunk):
        xc = x[start:start + chunk]
        idx = [locate(xc[:, l], J) for l in range(d)]
        cell = np.ravel_multi_index(idx, (1 << J,) * d)
        feats = None
        for l in range(d):
            u = 2.0 * (np.ldexp(xc[:, l], J) - idx[l]) - 1.0
            t = legendre_table(A[l] - 1, u).T  # (A_l, m), contiguous
            feats = t if feats is None else (feats[:, None, :] * t[None, :, :]).reshape(-1, len(xc))
        # linear-time scatter-add, one moment at a time
        for j, row in enumerate(feats):
            flat[:, j] += np.bincount(cell, weights=row, minlength=ncell)
    moments = {(J,) * d: flat.reshape((1 << J,) * d + tuple(A))}

    merge = [moment_merge(a - 1) for a in A]
    for s in _scales(J, d)[1:]:
        l = next(i for i in range(d) if s[i] < J)
        child = list(s)
        child[l] += 1
        C = moments[tuple(child)]
        lo = np.take(C, np.arange(0, C.shape[l], 2), axis=l)
        hi = np.take(C, np.arange(1, C.shape[l], 2), axis=l)
        Mlo, Mhi = merge[l]
        moments[s] = _apply_axis(Mlo, lo, d + l) + _apply_axis(Mhi, hi, d + l)

    stats = CellStats(n, d, J, tuple(r), moments)
    pis = pi_array(r)
    sq = [square_coeffs(rl) for rl in r]
    for s, G in moments.items():
        vol = 2.0 ** (-sum(s))
        sl = (slice(None),) * d + tuple(slice(0, rl + 1) for rl in r)
        stats.S1[s] = np.sqrt(pis / vol) * G[sl]
        S2 = G
        for l in range(d):
            S2 = _apply_axis(sq[l], S2, d + l)
        stats.S2[s] = (pis / vol) * S2
    return stats


def sigma_hat(stats: CellStats, K: DyadicRectangle, k: Sequence[int]) -> float:
    """Unbiased U-statistic estimate of ``Var(Phi[K, k](Y_1))``."""
    S1, S2 = stats.phi_sums(K, k)
    n = stats.n
    return (n * S2 - S1 * S1) / (n * (n - 1))


def _sigma_hat_array(stats: CellStats, s) -> np.ndarray:
    n = stats.n
    return (n * stats.S2[s] - stats.S1[s] ** 2) / (n * (n - 1))


def m_hats(stats: CellStats, config: PenaltyConfig | None = None) -> tuple[float, float]:
    """The data-driven sup-norm proxies ``(M1_hat, M2_hat)`` over ``D_star``."""
    d = stats.d
    pis = pi_array(stats.r_star)
    kaxes = tuple(range(d, 2 * d))
    m1 = m2 = 0.0
    for s in stats.scales:
        vol = 2.0 ** (-sum(s))
        m1 = max(m1, float(np.max(np.sum(np.sqrt(pis / vol) * np.abs(stats.S1[s]), axis=kaxes))))
        m2 = max(m2, float(np.max(stats.S2[s])))
    return m1 / stats.n, m2 / stats.n


def leaf_constant(stats: CellStats, config: PenaltyConfig, mh: tuple[float, float] | None = None) -> float:
    """The per-leaf part of the penalty, ``L/n ((k3 M2 + k4 pi(r*)) |Lambda| + k5 M1)``."""
    m1, m2 = mh if mh is not None else m_hats(stats, config)
    k = config.kappa
    return config.weight / stats.n * ((k[2] * m2 + k[3] * pi_weight(config.r_star)) * config.lam + k[4] * m1)


def _per_k_terms(stats: CellStats, config: PenaltyConfig, s) -> np.ndarray:
    n = stats.n
    k1, k2 = config.kappa[:2]
    return (-(stats.S1[s] / n) ** 2 + k1 * _sigma_hat_array(stats, s) / n
            + k2 * pi_array(stats.r_star) / n)


def _criterion_all(stats: CellStats, config: PenaltyConfig, s, const: float) -> np.ndarray:
    """``W(K, r)`` for every ``K`` at scale ``s`` and every ``r <= r_star``."""
    W = _per_k_terms(stats, config, s)
    for l in range(stats.d):
        W = np.cumsum(W, axis=stats.d + l)
    return W + const


def cell_criterion(stats: CellStats, config: PenaltyConfig, K: DyadicRectangle,
                   r: Sequence[int], const: float | None = None) -> float:
    """``W(K, r)``: fitted-coefficient gain, variance and complexity terms of one rectangle."""
    stats._check(K)
    if any(a > b for a, b in zip(r, config.r_star)):
        raise ValueError("r must be <= r_star componentwise")
    if const is None:
        const = leaf_constant(stats, config)
    t = _per_k_terms(stats, config, K.scale)[K.pos]
    return float(np.sum(t[tuple(slice(0, g + 1) for g in r)]) + const)


def degree_order(r_star: Sequence[int]) -> list[tuple[int, ...]]:
    """Degree vectors ordered for tie-breaking: smaller ``|Lambda(r)|`` first, then lexicographic."""
    return sorted(itertools.product(*[range(g + 1) for g in r_star]),
                  key=lambda r: (lambda_size(r), r))


def _best_all(stats: CellStats, config: PenaltyConfig, s, const: float):
    W = _criterion_all(stats, config, s, const)
    d = stats.d
    order = degree_order(config.r_star)
    flat_idx = [np.ravel_multi_index(r, [g + 1 for g in config.r_star]) for r in order]
    Wf = W.reshape(W.shape[:d] + (-1,))[..., flat_idx]
    pick = np.argmin(Wf, axis=-1)
    best = np.take_along_axis(Wf, pick[..., None], axis=-1)[..., 0]
    return best, np.asarray(order, dtype=int)[pick]


def best_degree(stats: CellStats, config: PenaltyConfig, K: DyadicRectangle,
                const: float | None = None) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimization of ``W(K, r)`` over ``r <= r_star``."""
    if const is None:
        const = leaf_constant(stats, config)
    best_r, best_v = None, math.inf
    for r in degree_order(config.r_star):
        v = cell_criterion(stats, config, K, r, const)
        if v < best_v:
            best_r, best_v = r, v
    return best_r, best_v


# ---------------------------------------------------------------------------
# Model selection

@dataclass
class FittedModel:
    density: PiecewisePoly
    criterion: float
    config: PenaltyConfig
    diagnostics: dict = field(default_factory=dict)

    @property
    def tree(self) -> PartitionTree:
        return self.density.tree

    @property
    def d(self) -> int:
        return self.density.d

    @property
    def cells(self) -> list[DyadicRectangle]:
        return self.density.cells

    @property
    def degrees(self) -> list[tuple[int, ...]]:
        return self.density.degrees

    @property
    def n_cells(self) -> int:
        return len(self.density.cells)

    def __call__(self, x) -> np.ndarray:
        return self.density(x)

    def to_dict(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if k != "timings"}
        return {
            "format": "dyadpoly-model",
            "version": 1,
            "d": self.d,
            "tree": encode_tree(self.tree),
            "leaves": [
                {"scale": list(K.scale), "pos": list(K.pos), "degree": list(r),
                 "coef": c.tolist()}
                for K, r, c in zip(self.cells, self.degrees, self.density.coeffs)
            ],
            "criterion": self.criterion,
            "config": self.config.to_dict(),
            "diagnostics": diag,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        if data.get("format") != "dyadpoly-model":
            raise ValueError("not a dyadpoly model file")
        d = int(data["d"])
        tree = decode_tree(data["tree"], d)
        cells = leaves(tree, d)
        if len(cells) != len(data["leaves"]):
            raise ValueError("leaf count does not match the tree")
        coeffs = []
        for K, entry in zip(cells, data["leaves"]):
            if tuple(entry["scale"]) != K.scale or tuple(entry["pos"]) != K.pos:
                raise ValueError(f"leaf {entry['scale']}/{entry['pos']} does not match the tree")
            c = np.asarray(entry["coef"], dtype=float).reshape([g + 1 for g in entry["degree"]])
            coeffs.append(c)
        return cls(PiecewisePoly(tree, d, tuple(coeffs)), float(data["criterion"]),
                   PenaltyConfig.from_dict(data["config"]), dict(data.get("diagnostics", {})))


def select_partition(stats: CellStats, config: PenaltyConfig) -> FittedModel:
    """Bottom-up dynamic program over ``D_star`` for the best penalized model.

    Ties prefer keeping a leaf over splitting, then the smallest cut axis.
    """
    if stats.J != config.J_star or stats.r_star != config.r_star:
        raise ValueError("statistics were built for a different J_star or r_star")
    d, J, n = stats.d, stats.J, stats.n
    mh = m_hats(stats, config)
    const = leaf_constant(stats, config, mh)
    Wstar, choice, rhat = {}, {}, {}
    for s in stats.scales:
        best, rh = _best_all(stats, config, s, const)
        rhat[s] = rh
        cur = best.copy()
        ch = np.zeros(cur.shape, dtype=np.int8)
        for l in range(d):
            if s[l] >= J:
                continue
            child = list(s)
            child[l] += 1
            C = Wstar[tuple(child)]
            cand = np.take(C, np.arange(0, C.shape[l], 2), axis=l) + np.take(C, np.arange(1, C.shape[l], 2), axis=l)
            better = cand < cur
            cur = np.where(better, cand, cur)
            ch[better] = l + 1
        Wstar[s] = cur
        choice[s] = ch

    cells, coeffs = [], []

    def build(s, pos):
        c = int(choice[s][pos])
        if c == 0:
            r = tuple(int(v) for v in rhat[s][pos])
            cells.append(DyadicRectangle(s, pos))
            coeffs.append(stats.S1[s][pos][tuple(slice(0, g + 1) for g in r)] / n)
            return Leaf()
        child = list(s)
        child[c - 1] += 1
        lo, hi = list(pos), list(pos)
        lo[c - 1] = 2 * pos[c - 1]
        hi[c - 1] = 2 * pos[c - 1] + 1
        return Node(c, build(tuple(child), tuple(lo)), build(tuple(child), tuple(hi)))

    root = (0,) * d
    tree = build(root, root)
    density = PiecewisePoly(tree, d, tuple(coeffs))
    diag = {"n": n, "J_star": J, "M1_hat": mh[0], "M2_hat": mh[1],
            "weight_L": config.weight, "leaf_constant": const,
            "n_rectangles": stats.n_rectangles()}
    return FittedModel(density, float(Wstar[root][root]), config, diag)


def fit(sample, config: PenaltyConfig | None = None, **overrides) -> FittedModel:
    """Fit the penalized estimator; keyword overrides go to :func:`make_config`."""
    t0 = time.perf_counter()
    x = as_sample(sample)
    n, d = x.shape
    if config is None:
        config = make_config(n, d, **overrides)
    elif overrides:
        config = replace(config, **overrides)
    for msg in config.hypothesis_warnings(n):
        log.warning(msg)
    t1 = time.perf_counter()
    stats = build_stats(x, config)
    t2 = time.perf_counter()
    model = select_partition(stats, config)
    t3 = time.perf_counter()
    model.diagnostics["timings"] = {"validate": t1 - t0, "stats": t2 - t1, "select": t3 - t2,
                                    "total": t3 - t0}
    return model


def evaluate(model: FittedModel, x) -> np.ndarray:
    return model.density(x)


# ---------------------------------------------------------------------------
# Contrast and penalty, evaluated directly

def empirical_contrast(t, sample) -> float:
    """``||t||_2^2 - (2/n) sum_i t(Y_i)`` for a piecewise polynomial ``t``."""
    x = as_sample(sample)
    if isinstance(t, FittedModel):
        t = t.density
    return t.norm2() - 2.0 * float(np.mean(t(x)))


def penalty(stats: CellStats, config: PenaltyConfig, cells: Sequence[DyadicRectangle],
            degrees: Sequence[Sequence[int]]) -> float:
    """``pen(m, rho)`` with the uniform weight ``log(8 d |Lambda(r_star)|)``."""
    n = stats.n
    k1, k2 = config.kappa[:2]
    m1, m2 = m_hats(stats, config)
    k = config.kappa
    total = 0.0
    for K, rho in zip(cells, degrees):
        for kk in itertools.product(*[range(g + 1) for g in rho]):
            total += k1 * sigma_hat(stats, K, kk) + k2 * pi_weight(kk)
    total /= n
    total += ((k[2] * m2 + k[3] * pi_weight(config.r_star)) * config.lam + k[4] * m1) \
        * config.weight * len(cells) / n
    return total
