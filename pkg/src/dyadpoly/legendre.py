"""Orthonormal tensor-Legendre bases on dyadic rectangles.

``Phi[K, k](x) = sqrt(pi(k) / |K|) * prod_l Q_{k_l}(u_l)`` where ``u`` maps
``K`` affinely onto ``[-1, 1]^d`` and ``Q_j`` is the Legendre polynomial with
``Q_j(1) = 1``.  Coefficient arrays are indexed by the multi-index ``k``, so a
polynomial with per-axis degrees ``rho`` carries an array of shape
``tuple(r + 1 for r in rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .dyadic import DyadicRectangle, Leaf, Node, PartitionTree, leaves, split


def legendre_table(deg: int, u) -> np.ndarray:
    """``Q_0(u), ..., Q_deg(u)`` stacked on a new trailing axis (three-term recurrence)."""
    u = np.asarray(u, dtype=float)
    # degree-major storage keeps every recurrence step contiguous
    out = np.empty((deg + 1,) + u.shape)
    out[0] = 1.0
    if deg >= 1:
        out[1] = u
    for j in range(1, deg):
        out[j + 1] = ((2 * j + 1) * u * out[j] - j * out[j - 1]) / (j + 1)
    return np.moveaxis(out, 0, -1)


def legendre_eval(j: int, u):
    """Legendre polynomial ``Q_j`` at ``u``."""
    val = legendre_table(j, u)[..., j]
    return float(val) if np.ndim(val) == 0 else val


def pi_weight(k: Sequence[int]) -> int:
    return math.prod(2 * kl + 1 for kl in k)


def lambda_size(rho: Sequence[int]) -> int:
    return math.prod(r + 1 for r in rho)


def degree_set(rho: Sequence[int]) -> list[tuple[int, ...]]:
    """The multi-indices ``k <= rho`` in C order."""
    return list(np.ndindex(*[r + 1 for r in rho]))


def pi_array(rho: Sequence[int]) -> np.ndarray:
    """``pi(k)`` for every ``k <= rho``, shaped like a coefficient array."""
    out = np.ones([r + 1 for r in rho])
    for l, r in enumerate(rho):
        shape = [1] * len(rho)
        shape[l] = r + 1
        out = out * (2 * np.arange(r + 1) + 1).reshape(shape)
    return out


def local_coords(K: DyadicRectangle, x: np.ndarray) -> np.ndarray:
    lo, hi = K.lower, K.upper
    return (2 * x - lo - hi) / (hi - lo)


def axis_tables(K: DyadicRectangle, rho: Sequence[int], x: np.ndarray) -> list[np.ndarray]:
    """Per-axis normalized factors ``sqrt((2k+1)/w_l) Q_k(u_l)``, each ``(m, rho_l + 1)``."""
    u = local_coords(K, x)
    w = K.widths
    tabs = []
    for l, r in enumerate(rho):
        t = legendre_table(r, u[:, l])
        t *= np.sqrt((2 * np.arange(r + 1) + 1) / w[l])
        tabs.append(t)
    return tabs


def contract(coeffs: np.ndarray, tables: list[np.ndarray]) -> np.ndarray:
    """Evaluate ``sum_k coeffs[k] prod_l tables[l][:, k_l]`` for every row."""
    m = tables[0].shape[0]
    res = tables[0] @ coeffs.reshape(coeffs.shape[0], -1)
    for t in tables[1:]:
        res = np.einsum("mk,mkr->mr", t, res.reshape(m, t.shape[1], -1))
    return res.reshape(m)


def basis_matrix(K: DyadicRectangle, rho: Sequence[int], x, mask: bool = True) -> np.ndarray:
    """Values of every ``Phi[K, k]``, ``k <= rho``, at the rows of ``x``: shape ``(m, |Lambda|)``.

    Points outside ``K`` give zero rows unless ``mask`` is false, in which case
    the polynomial pieces are extended to all of ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tabs = axis_tables(K, rho, x)
    out = tabs[0]
    for t in tabs[1:]:
        out = (out[:, :, None] * t[:, None, :]).reshape(len(x), -1)
    return out * K.contains(x)[:, None] if mask else out


def phi_eval(K: DyadicRectangle, k: Sequence[int], x):
    """``Phi[K, k]`` at ``x`` (a point or an ``(m, d)`` array)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xx = np.atleast_2d(x)
    tabs = axis_tables(K, k, xx)
    val = np.ones(len(xx))
    for t, kl in zip(tabs, k):
        val *= t[:, kl]
    val *= K.contains(xx)
    return float(val[0]) if single else val


# ---------------------------------------------------------------------------
# Quadrature and projection

@lru_cache(maxsize=None)
def _gauss(order: int):
    return npleg.leggauss(order)


def gauss_grid(K: DyadicRectangle, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes ``(m, d)`` and weights ``(m,)`` on ``K``."""
    t, w = _gauss(order)
    lo, wid = K.lower, K.widths
    axes = [lo[l] + 0.5 * (t + 1) * wid[l] for l in range(K.d)]
    wts = [0.5 * w * wid[l] for l in range(K.d)]
    nodes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    weights = np.ones(1)
    for wl in wts:
        weights = np.multiply.outer(weights, wl).ravel()
    return nodes, weights


def _eval_finite(f: Callable, x: np.ndarray) -> np.ndarray:
    vals = np.asarray(f(x), dtype=float).reshape(len(x))
    if not np.all(np.isfinite(vals)):
        raise ValueError("function returned non-finite values")
    return vals


def project(f: Callable, K: DyadicRectangle, rho: Sequence[int],
            quad_order: int | None = None) -> np.ndarray:
    """Coefficients ``<f, Phi[K, k]>`` for ``k <= rho`` by tensor Gauss-Legendre quadrature.

    ``f`` maps an ``(m, d)`` array of points to ``m`` values.  The default order
    ``max(rho) + 4`` integrates products with polynomials of coordinate degree
    ``<= max(rho) + 7`` exactly.
    """
    if quad_order is None:
        quad_order = max(rho) + 4
    if quad_order < max(rho) + 1:
        raise ValueError("quad_order must be at least max(rho) + 1")
    nodes, w = gauss_grid(K, quad_order)
    vals = _eval_finite(f, nodes)
    B = basis_matrix(K, rho, nodes, mask=False)
    return (B.T @ (w * vals)).reshape([r + 1 for r in rho])


def project_many(f: Callable, cells: Sequence[DyadicRectangle], rho: Sequence[int],
                 quad_order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batched L2 projection on cells that share one scale vector.

    Returns the coefficient arrays ``(ncells, *shape)`` and the residual norms
    ``||(f - P_K) 1_K||_2`` computed at the quadrature nodes.
    """
    if quad_order is None:
        quad_order = max(rho) + 4
    ref = cells[0]
    if any(c.scale != ref.scale for c in cells):
        raise ValueError("project_many needs cells of a single scale")
    nodes, w = gauss_grid(DyadicRectangle(ref.scale, (0,) * ref.d), quad_order)
    B = basis_matrix(DyadicRectangle(ref.scale, (0,) * ref.d), rho, nodes, mask=False)
    shifts = np.array([c.lower for c in cells])
    pts = (shifts[:, None, :] + nodes[None, :, :]).reshape(-1, ref.d)
    vals = _eval_finite(f, pts).reshape(len(cells), -1)
    coef = (vals * w) @ B
    resid = vals - coef @ B.T
    err = np.sqrt(np.maximum((resid * resid) @ w, 0.0))
    return coef.reshape((len(cells),) + tuple(r + 1 for r in rho)), err


def _closed_grid(K: DyadicRectangle, grid: int) -> np.ndarray:
    axes = [np.linspace(a, b, grid) for a, b in zip(K.lower, K.upper)]
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)


def best_poly(f: Callable, K: DyadicRectangle, r: Sequence[int], q: float = 2.0,
              grid: int = 64, quad_order: int | None = None) -> tuple[np.ndarray, float]:
    """Best ``L_q(K)`` polynomial of per-axis degree ``<= r`` and its error.

    ``q = 2`` is the orthogonal projection, evaluated by Gauss quadrature.
    Other ``q`` minimize a discretized norm: the max over a closed
    ``grid**d`` lattice for ``q = inf``, a Gauss-weighted sum on ``grid``
    nodes per axis otherwise.  ``q = 1`` and ``q = inf`` are solved as linear
    programs, ``1 < q < inf`` by quasi-Newton descent from the projection.
    """
    from scipy.optimize import linprog, minimize

    shape = tuple(g + 1 for g in r)
    if q == 2:
        coef, err = project_many(f, [K], r, quad_order)
        return coef[0], float(err[0])
    if not (q >= 1):
        raise ValueError("q must be in [1, inf]")
    if math.isinf(q):
        x = _closed_grid(K, grid)
        wts = None
    else:
        x, wts = gauss_grid(K, grid)
    vals = _eval_finite(f, x)
    B = basis_matrix(K, r, x, mask=False)
    m, nb = B.shape
    seed = np.linalg.lstsq(B if wts is None else B * np.sqrt(wts)[:, None],
                           vals if wts is None else vals * np.sqrt(wts), rcond=None)[0]
    if math.isinf(q) or q == 1:
        if math.isinf(q):
            # variables (c, t): min t  s.t.  |vals - B c| <= t
            cost = np.r_[np.zeros(nb), 1.0]
            ones = np.ones((m, 1))
            A = np.block([[B, -ones], [-B, -ones]])
        else:
            # variables (c, t_i): min sum w_i t_i  s.t.  |vals_i - (B c)_i| <= t_i
            cost = np.r_[np.zeros(nb), wts]
            eye = np.eye(m)
            A = np.block([[B, -eye], [-B, -eye]])
        res = linprog(cost, A_ub=A, b_ub=np.r_[vals, -vals],
                      bounds=[(None, None)] * nb + [(0, None)] * (A.shape[1] - nb),
                      method="highs")
        coef = res.x[:nb] if res.success else seed
    else:
        def obj(c):
            e = vals - B @ c
            a = np.abs(e)
            return np.sum(wts * a ** q), -q * B.T @ (wts * a ** (q - 1) * np.sign(e))

        res = minimize(obj, seed, jac=True, method="L-BFGS-B",
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
        coef = res.x if obj(res.x)[0] <= obj(seed)[0] else seed
    e = np.abs(vals - B @ coef)
    err = float(e.max()) if math.isinf(q) else float(np.sum(wts * e ** q) ** (1.0 / q))
    return coef.reshape(shape), err


def residual_norm(f: Callable, K: DyadicRectangle, r: Sequence[int], q: float = 2.0,
                  grid: int = 64, quad_order: int | None = None) -> float:
    """Error of the best approximation of ``f`` on ``K`` by polynomials of degree ``<= r``."""
    return best_poly(f, K, r, q, grid, quad_order)[1]


# ---------------------------------------------------------------------------
# Coefficient transport between a rectangle and its halves

@lru_cache(maxsize=None)
def transport_1d(deg: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices expressing the parent basis in each half's basis.

    ``phi_k^parent = sum_j T[j, k] phi_j^half`` on the half, for ``j, k <= deg``.
    The same pair serves every axis and every interval by affine invariance.
    """
    t, w = _gauss(deg + 2)
    mats = []
    for sign in (-1.0, 1.0):
        # half in parent coords is [-1, 0] or [0, 1]; u_parent = (u_half + sign) / 2
        u_parent = 0.5 * (t + sign)
        P = legendre_table(deg, u_parent) * np.sqrt(2 * np.arange(deg + 1) + 1)
        H = legendre_table(deg, t) * np.sqrt(2 * np.arange(deg + 1) + 1)
        # dx = (width / 4) du_half and the normalizations contribute sqrt(2) / width
        T = (H * w[:, None]).T @ P * (math.sqrt(2.0) / 4.0)
        T[np.abs(T) < 1e-15] = 0.0
        mats.append(T)
    mats[0].flags.writeable = False
    mats[1].flags.writeable = False
    return mats[0], mats[1]


def transport_down(coeffs: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Re-expand ``coeffs`` on the two halves obtained by cutting along ``axis`` (1-based)."""
    l = axis - 1
    lo, hi = transport_1d(coeffs.shape[l] - 1)
    return (np.moveaxis(np.tensordot(lo, coeffs, axes=([1], [l])), 0, l),
            np.moveaxis(np.tensordot(hi, coeffs, axes=([1], [l])), 0, l))


def transport_up(c_lo: np.ndarray, c_hi: np.ndarray, axis: int) -> np.ndarray:
    """Inner products against the parent basis from those against each half's basis.

    Adjoint of :func:`transport_down`; the inputs must carry at least the
    degrees wanted on output.
    """
    l = axis - 1
    lo, hi = transport_1d(c_lo.shape[l] - 1)
    return (np.moveaxis(np.tensordot(lo.T, c_lo, axes=([1], [l])), 0, l)
            + np.moveaxis(np.tensordot(hi.T, c_hi, axes=([1], [l])), 0, l))


def pad_to(c: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in c.shape)] = c
    return out


def truncate_to(c: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    return c[tuple(slice(0, s) for s in shape)]


# ---------------------------------------------------------------------------
# Piecewise polynomials

@dataclass(frozen=True, eq=False)
class PiecewisePoly:
    """A function that is polynomial on each leaf of a partition tree.

    ``coeffs[i]`` holds the coefficients on ``leaves(tree, d)[i]``.
    """

    tree: PartitionTree
    d: int
    coeffs: tuple[np.ndarray, ...]
    _inner_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(np.asarray(c, dtype=float) for c in self.coeffs))
        if len(self.coeffs) != len(self.cells):
            raise ValueError("one coefficient array per leaf is required")
        for c in self.coeffs:
            if c.ndim != self.d:
                raise ValueError(f"coefficient arrays must have {self.d} axes")

    @classmethod
    def zero(cls, d: int) -> "PiecewisePoly":
        return cls(Leaf(), d, (np.zeros((1,) * d),))

    @classmethod
    def from_function(cls, f: Callable, tree: PartitionTree, d: int,
                      degrees, quad_order: int | None = None) -> "PiecewisePoly":
        cells = leaves(tree, d)
        if np.ndim(degrees) == 1:
            degrees = [tuple(degrees)] * len(cells)
        return cls(tree, d, tuple(project(f, K, r, quad_order) for K, r in zip(cells, degrees)))

    @cached_property
    def cells(self) -> list[DyadicRectangle]:
        return leaves(self.tree, self.d)

    @property
    def degrees(self) -> list[tuple[int, ...]]:
        return [tuple(s - 1 for s in c.shape) for c in self.coeffs]

    def norm2(self) -> float:
        """Squared L2 norm (Parseval)."""
        return float(sum(np.sum(c * c) for c in self.coeffs))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(len(x))
        it = iter(self.coeffs)
        stack = [(self.tree, DyadicRectangle.unit(self.d), np.arange(len(x)))]
        # preorder traversal, so leaves come out in the same order as self.cells
        while stack:
            node, R, idx = stack.pop()
            if isinstance(node, Leaf):
                c = next(it)
                if len(idx):
                    out[idx] = contract(c, axis_tables(R, [s - 1 for s in c.shape], x[idx]))
                continue
            lo, hi = split(R, node.direction)
            # the lower half is closed at its upper end
            below = x[idx, node.direction - 1] <= lo.upper[node.direction - 1]
            stack.append((node.right, hi, idx[~below]))
            stack.append((node.left, lo, idx[below]))
        return out

    def inner_products(self, K: DyadicRectangle, degree: Sequence[int]) -> tuple[np.ndarray, float]:
        """Exact ``<self, Phi[K, k]>`` for ``k <= degree`` and ``||self 1_K||^2``."""
        key = (K, tuple(degree))
        hit = self._inner_cache.get(key)
        if hit is not None:
            return hit
        res = self._inner(K, tuple(degree))
        self._inner_cache[key] = res
        return res

    def _inner(self, K, degree):
        # deepest tree node whose rectangle contains K
        node, R, i = self.tree, DyadicRectangle.unit(self.d), 0
        while isinstance(node, Node):
            lo, hi = split(R, node.direction)
            if lo.contains_rect(K):
                node, R = node.left, lo
            elif hi.contains_rect(K):
                i += _count_leaves(node.left)
                node, R = node.right, hi
            else:
                # K straddles this cut, so it has the parent's scale on this axis
                a, b = split(K, node.direction)
                ca, na = self.inner_products(a, degree)
                cb, nb = self.inner_products(b, degree)
                return transport_up(ca, cb, node.direction), na + nb
            continue
        c = self.coeffs[i]
        # walk down from the leaf rectangle R to K
        while R != K:
            for axis in range(1, self.d + 1):
                if R.scale[axis - 1] < K.scale[axis - 1]:
                    lo, hi = split(R, axis)
                    c_lo, c_hi = transport_down(c, axis)
                    if lo.contains_rect(K):
                        R, c = lo, c_lo
                    else:
                        R, c = hi, c_hi
                    break
        norm2 = float(np.sum(c * c))
        shape = [max(a, b + 1) for a, b in zip(c.shape, degree)]
        return truncate_to(pad_to(c, shape), [g + 1 for g in degree]), norm2


def _count_leaves(tree: PartitionTree) -> int:
    if isinstance(tree, Leaf):
        return 1
    return _count_leaves(tree.left) + _count_leaves(tree.right)


# ---------------------------------------------------------------------------
# Exact L2 distance on the common refinement

def _attach(tree: PartitionTree, coeffs):
    """Nested ``(direction, left, right)`` tuples with coefficient arrays at the leaves."""
    it = iter(coeffs)

    def build(node):
        if isinstance(node, Leaf):
            return next(it)
        return (node.direction, build(node.left), build(node.right))

    return build(tree)


def _restrict(t, axis: int, side: int):
    """Restriction of an attached tree to the lower (0) or upper (1) half along ``axis``."""
    if isinstance(t, np.ndarray):
        return transport_down(t, axis)[side]
    direction, left, right = t
    if direction == axis:
        return right if side else left
    return (direction, _restrict(left, axis, side), _restrict(right, axis, side))


def l2_dist(a: PiecewisePoly, b: PiecewisePoly) -> float:
    """Exact ``||a - b||_2`` by re-expanding both on their common refinement."""
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    total = 0.0
    stack = [(_attach(a.tree, a.coeffs), _attach(b.tree, b.coeffs))]
    while stack:
        ta, tb = stack.pop()
        if isinstance(ta, np.ndarray) and isinstance(tb, np.ndarray):
            shape = [max(x, y) for x, y in zip(ta.shape, tb.shape)]
            diff = pad_to(ta, shape) - pad_to(tb, shape)
            total += float(np.sum(diff * diff))
            continue
        if isinstance(ta, np.ndarray):
            ta, tb = tb, ta
        axis = ta[0]
        stack.append((ta[1], _restrict(tb, axis, 0)))
        stack.append((ta[2], _restrict(tb, axis, 1)))
    return math.sqrt(total)
