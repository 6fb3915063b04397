"""Dyadic rectangles of the unit cube, anisotropic scale families and
partition trees.

Rectangles are stored as integer ``(scale, pos)`` pairs.  Along axis ``l`` the
rectangle covers ``[0, 2**-j]`` when ``pos == 0`` and
``(k 2**-j, (k+1) 2**-j]`` otherwise, so every point of ``[0, 1]`` falls in
exactly one cell of any dyadic grid.

Axes are numbered ``1..d`` in trees and in :func:`split`, matching the cut
labels of the text encoding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence, Union

import numpy as np

#: Total number of scale bits a rectangle may carry.
MAX_SCALE_BITS = 62


class BudgetExceeded(RuntimeError):
    """Raised when a refinement or enumeration would exceed its budget."""


@dataclass(frozen=True, order=True)
class DyadicRectangle:
    scale: tuple[int, ...]
    pos: tuple[int, ...]

    def __post_init__(self):
        if len(self.scale) != len(self.pos):
            raise ValueError("scale and pos must have the same length")
        for j, k in zip(self.scale, self.pos):
            if j < 0 or not 0 <= k < (1 << j):
                raise ValueError(f"invalid dyadic index (scale={j}, pos={k})")

    @classmethod
    def unit(cls, d: int) -> "DyadicRectangle":
        return cls((0,) * d, (0,) * d)

    @property
    def d(self) -> int:
        return len(self.scale)

    @property
    def measure(self) -> Fraction:
        return Fraction(1, 1 << sum(self.scale))

    @property
    def volume(self) -> float:
        return math.ldexp(1.0, -sum(self.scale))

    @property
    def lower(self) -> np.ndarray:
        return np.array([math.ldexp(k, -j) for j, k in zip(self.scale, self.pos)])

    @property
    def upper(self) -> np.ndarray:
        return np.array([math.ldexp(k + 1, -j) for j, k in zip(self.scale, self.pos)])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self) -> np.ndarray:
        return np.array([math.ldexp(1.0, -j) for j in self.scale])

    def exact_bounds(self) -> list[tuple[Fraction, Fraction]]:
        return [(Fraction(k, 1 << j), Fraction(k + 1, 1 << j))
                for j, k in zip(self.scale, self.pos)]

    def contains(self, x) -> np.ndarray:
        """Membership mask for points ``x`` of shape ``(n, d)`` or ``(d,)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        mask = np.ones(len(x), dtype=bool)
        for l, (j, k) in enumerate(zip(self.scale, self.pos)):
            mask &= locate(x[:, l], j) == k
            mask &= (x[:, l] >= 0.0) & (x[:, l] <= 1.0)
        return mask[0] if single else mask

    def contains_rect(self, other: "DyadicRectangle") -> bool:
        return all(jo >= j and (ko >> (jo - j)) == k
                   for j, k, jo, ko in zip(self.scale, self.pos, other.scale, other.pos))

    def disjoint(self, other: "DyadicRectangle") -> bool:
        for j, k, jo, ko in zip(self.scale, self.pos, other.scale, other.pos):
            m = min(j, jo)
            if (k >> (j - m)) != (ko >> (jo - m)):
                return True
        return False

    def __str__(self):
        parts = []
        for (a, b), k in zip(self.exact_bounds(), self.pos):
            parts.append(f"{'[' if k == 0 else '('}{a},{b}]")
        return "x".join(parts)


def locate(x, scale: int) -> np.ndarray:
    """Index of the scale-``scale`` dyadic interval containing each ``x``."""
    x = np.asarray(x, dtype=float)
    idx = np.ceil(np.ldexp(x, scale)).astype(np.int64) - 1
    return np.clip(idx, 0, (1 << scale) - 1)


def split(K: DyadicRectangle, axis: int) -> tuple[DyadicRectangle, DyadicRectangle]:
    """Halve ``K`` along ``axis`` (1-based) into its lower and upper halves."""
    if not 1 <= axis <= K.d:
        raise ValueError(f"axis must be in 1..{K.d}, got {axis}")
    l = axis - 1
    scale = list(K.scale)
    scale[l] += 1
    lo, hi = list(K.pos), list(K.pos)
    lo[l] = 2 * K.pos[l]
    hi[l] = 2 * K.pos[l] + 1
    return (DyadicRectangle(tuple(scale), tuple(lo)),
            DyadicRectangle(tuple(scale), tuple(hi)))


# ---------------------------------------------------------------------------
# Anisotropic families

@dataclass(frozen=True)
class AnisoFamily:
    """Grid family whose axis-``l`` scale at level ``j`` is ``floor(j min(sigma)/sigma_l)``."""

    sigma: tuple[float, ...]
    bit_budget: int = MAX_SCALE_BITS

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        if not self.sigma or any(s <= 0 for s in self.sigma):
            raise ValueError("sigma must be a non-empty vector of positive reals")

    @property
    def d(self) -> int:
        return len(self.sigma)

    @property
    def sigma_min(self) -> float:
        return min(self.sigma)

    @property
    def harmonic_mean(self) -> float:
        return harmonic_mean(self.sigma)

    def scales(self, j: int) -> tuple[int, ...]:
        if j < 0:
            raise ValueError("level must be nonnegative")
        # small slack so that e.g. 3 * (1/3) floors to 1
        out = tuple(int(math.floor(j * self.sigma_min / s + 1e-9)) for s in self.sigma)
        if sum(out) > self.bit_budget:
            raise BudgetExceeded(f"level {j} needs {sum(out)} scale bits")
        return out


def harmonic_mean(sigma: Sequence[float]) -> float:
    return len(sigma) / sum(1.0 / s for s in sigma)


def aniso_cells(family: AnisoFamily, j: int) -> list[DyadicRectangle]:
    """All cells of the level-``j`` grid of ``family``."""
    scale = family.scales(j)
    ranges = [range(1 << s) for s in scale]
    return [DyadicRectangle(scale, tuple(p)) for p in _product(ranges)]


def aniso_children(K: DyadicRectangle, family: AnisoFamily, j: int) -> list[DyadicRectangle]:
    """Cells of level ``j + 1`` contained in the level-``j`` cell ``K``."""
    if K.scale != family.scales(j):
        raise ValueError(f"{K} is not on the level-{j} grid of {family.sigma}")
    nxt = family.scales(j + 1)
    ranges = []
    for s, s1, k in zip(K.scale, nxt, K.pos):
        step = s1 - s
        ranges.append(range(k << step, (k + 1) << step))
    return [DyadicRectangle(nxt, tuple(p)) for p in _product(ranges)]


def _product(ranges):
    return itertools.product(*ranges)


# ---------------------------------------------------------------------------
# Partition trees

@dataclass(frozen=True)
class Leaf:
    pass


@dataclass(frozen=True)
class Node:
    direction: int
    left: "PartitionTree"
    right: "PartitionTree"


PartitionTree = Union[Leaf, Node]

LEAF = Leaf()


def leaves(tree: PartitionTree, d: int, root: DyadicRectangle | None = None) -> list[DyadicRectangle]:
    """Leaf rectangles of ``tree`` in depth-first (preorder) order."""
    out: list[DyadicRectangle] = []
    stack = [(tree, root if root is not None else DyadicRectangle.unit(d))]
    while stack:
        node, K = stack.pop()
        if isinstance(node, Leaf):
            out.append(K)
        else:
            lo, hi = split(K, node.direction)
            stack.append((node.right, hi))
            stack.append((node.left, lo))
    return out


def grid_tree(scale: Sequence[int]) -> PartitionTree:
    """Tree of the uniform grid with the given per-axis scales (cuts axis 1 first)."""
    remaining = list(scale)
    for l, s in enumerate(remaining):
        if s > 0:
            remaining[l] -= 1
            sub = grid_tree(remaining)
            return Node(l + 1, sub, sub)
    return LEAF


def n_leaves(tree: PartitionTree) -> int:
    if isinstance(tree, Leaf):
        return 1
    return n_leaves(tree.left) + n_leaves(tree.right)


def n_internal(tree: PartitionTree) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + n_internal(tree.left) + n_internal(tree.right)


def directions(tree: PartitionTree) -> list[int]:
    """Cut directions in preorder."""
    if isinstance(tree, Leaf):
        return []
    return [tree.direction] + directions(tree.left) + directions(tree.right)


def tree_from_cells(cells: Sequence[DyadicRectangle], d: int) -> PartitionTree:
    """Rebuild a tree whose leaves are exactly ``cells``.

    Raises ``ValueError`` if ``cells`` is not a tree-representable partition.
    """
    cells = list(cells)

    def build(K, members):
        if len(members) == 1 and members[0] == K:
            return LEAF
        for axis in range(1, d + 1):
            lo, hi = split(K, axis)
            left = [c for c in members if lo.contains_rect(c)]
            right = [c for c in members if hi.contains_rect(c)]
            if len(left) + len(right) == len(members) and left and right:
                return Node(axis, build(lo, left), build(hi, right))
        raise ValueError("cells do not form a tree-representable partition")

    return build(DyadicRectangle.unit(d), cells)


def encode_tree(tree: PartitionTree) -> str:
    """Preorder token string: ``L`` for a leaf, the cut axis for a node."""
    tokens = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            tokens.append("L")
        else:
            tokens.append(str(node.direction))
            stack.append(node.right)
            stack.append(node.left)
    return " ".join(tokens)


def decode_tree(text: str, d: int | None = None) -> PartitionTree:
    tokens = text.split()
    if not tokens:
        raise ValueError("empty tree encoding")
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("truncated tree encoding")
        tok = tokens[pos]
        pos += 1
        if tok == "L":
            return LEAF
        try:
            axis = int(tok)
        except ValueError:
            raise ValueError(f"bad token {tok!r} at position {pos - 1}") from None
        if axis < 1 or (d is not None and axis > d):
            raise ValueError(f"cut direction {axis} out of range at position {pos - 1}")
        return Node(axis, parse(), parse())

    # iterative parse would be needed beyond ~1000 levels; depths here are bounded by the bit budget
    tree = parse()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens after position {pos}")
    return tree


# ---------------------------------------------------------------------------
# Enumeration

@lru_cache(maxsize=None)
def _shape_partitions(scale: tuple[int, ...], max_depth: int, max_leaves: int):
    """Partitions of the rectangle with the given scale, at position zero.

    Returns a dict mapping frozenset-of-relative-cells to a representative tree.
    Cells are encoded as (scale, pos) tuples relative to the rectangle origin.
    """
    K = DyadicRectangle(scale, (0,) * len(scale))
    out = {frozenset([(K.scale, K.pos)]): LEAF}
    if max_leaves < 2:
        return out
    for axis in range(1, len(scale) + 1):
        if scale[axis - 1] >= max_depth:
            continue
        lo, hi = split(K, axis)
        parts = _shape_partitions(lo.scale, max_depth, max_leaves - 1)
        shift = [0] * len(scale)
        shift[axis - 1] = 1
        for lset, ltree in parts.items():
            nl = len(lset)
            for rset, rtree in parts.items():
                if nl + len(rset) > max_leaves:
                    continue
                # right half cells: same shape, pos shifted by one along the cut axis
                moved = frozenset(
                    (s, tuple(p + (sh << (s[i] - lo.scale[i])) if sh else p
                              for i, (p, sh) in enumerate(zip(pos, shift))))
                    for s, pos in rset)
                key = lset | moved
                if key not in out:
                    out[key] = Node(axis, ltree, rtree)
    return out


def enumerate_partitions(max_depth: int, d: int, max_leaves: int | None = None,
                         budget: int = 10**6) -> Iterator[PartitionTree]:
    """Every tree-representable dyadic partition of ``[0,1]^d`` with all axis
    scales ``<= max_depth``, each leaf set yielded once.

    ``max_leaves`` optionally prunes to partitions with at most that many cells.
    """
    if max_depth < 0 or d < 1:
        raise ValueError("need max_depth >= 0 and d >= 1")
    if max_leaves is None:
        max_leaves = (1 << (max_depth * d))
        if max_leaves > 64:
            # a crude pre-check: the count grows doubly exponentially in depth
            estimate = _estimate_count(max_depth, d)
            if estimate > budget:
                raise BudgetExceeded(f"about {estimate:.3g} partitions exceed the budget of {budget}")
    parts = _shape_partitions((0,) * d, max_depth, max_leaves)
    if len(parts) > budget:
        raise BudgetExceeded(f"{len(parts)} partitions exceed the budget of {budget}")
    for tree in sorted(parts.values(), key=encode_tree):
        yield tree


def _estimate_count(max_depth: int, d: int) -> float:
    # upper bound via the tree recursion without deduplication
    @lru_cache(maxsize=None)
    def f(depth_left: tuple[int, ...]) -> float:
        total = 1.0
        for i, t in enumerate(depth_left):
            if t > 0:
                child = depth_left[:i] + (t - 1,) + depth_left[i + 1:]
                total += f(child) ** 2
                if total > 1e300:
                    return math.inf
        return total

    return f((max_depth,) * d)


def tree_shapes(n_leaf: int) -> list[PartitionTree]:
    """All unlabeled complete binary trees with ``n_leaf`` leaves (cut label 1)."""
    if n_leaf == 1:
        return [LEAF]
    out = []
    for a in range(1, n_leaf):
        for lt in tree_shapes(a):
            for rt in tree_shapes(n_leaf - a):
                out.append(Node(1, lt, rt))
    return out


def catalan(m: int) -> int:
    return math.comb(2 * m, m) // (m + 1)
