from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadpoly.dyadic import (LEAF, AnisoFamily, BudgetExceeded, DyadicRectangle, Leaf, Node,
                             aniso_cells, aniso_children, catalan, decode_tree, encode_tree,
                             enumerate_partitions, grid_tree, harmonic_mean, leaves, locate,
                             n_internal, n_leaves, split, tree_from_cells, tree_shapes)

from oracles import all_partitions, binary_tree_shapes, member

R = DyadicRectangle


# --- rectangles -------------------------------------------------------------

def test_rectangle_validates_positions():
    with pytest.raises(ValueError):
        R((1,), (2,))
    with pytest.raises(ValueError):
        R((1, 0), (0,))


def test_measure_is_exact():
    assert R((2, 3), (1, 5)).measure == Fraction(1, 32)


def test_split_root_halves():
    lo, hi = split(R.unit(2), 1)
    assert lo == R((1, 0), (0, 0)) and hi == R((1, 0), (1, 0))
    assert lo.exact_bounds() == [(0, Fraction(1, 2)), (0, 1)]
    assert hi.exact_bounds() == [(Fraction(1, 2), 1), (0, 1)]


def test_split_index_arithmetic():
    lo, hi = split(R((1, 0), (1, 0)), 2)
    assert (lo.scale, lo.pos) == ((1, 1), (1, 0))
    assert (hi.scale, hi.pos) == ((1, 1), (1, 1))


@given(st.integers(0, 5), st.integers(0, 5), st.data())
def test_split_halves_measure(j1, j2, data):
    K = R((j1, j2), (data.draw(st.integers(0, 2 ** j1 - 1)), data.draw(st.integers(0, 2 ** j2 - 1))))
    axis = data.draw(st.integers(1, 2))
    a, b = split(K, axis)
    assert a.measure == b.measure == K.measure / 2
    assert K.contains_rect(a) and K.contains_rect(b) and a.disjoint(b)


def test_split_rejects_bad_axis():
    with pytest.raises(ValueError):
        split(R.unit(2), 3)


def test_membership_convention_matches_oracle():
    x = np.array([[0.0], [0.25], [0.25 + 1e-17], [0.5], [0.75], [1.0]])
    for pos in range(4):
        np.testing.assert_array_equal(R((2,), (pos,)).contains(x), member((2,), (pos,), x))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.integers(0, 20))
def test_locate_puts_each_point_in_exactly_one_cell(xs, j):
    x = np.array(xs)
    k = locate(x, j)
    assert np.all((k >= 0) & (k < 2 ** j))
    lo, hi = k / 2.0 ** j, (k + 1) / 2.0 ** j
    assert np.all(x <= hi)
    assert np.all((x > lo) | ((k == 0) & (x >= 0)))


# --- anisotropic families ---------------------------------------------------

def test_aniso_cells_fig1():
    cells = aniso_cells(AnisoFamily((1, 2)), 2)
    assert {c.scale for c in cells} == {(2, 1)} and len(cells) == 8


def test_aniso_cells_root_and_example():
    assert aniso_cells(AnisoFamily((1, 1)), 0) == [R.unit(2)]
    cells = aniso_cells(AnisoFamily((1, 3)), 3)
    assert {c.scale for c in cells} == {(3, 1)} and len(cells) == 16


def test_aniso_isotropic_is_uniform_grid():
    for j in range(4):
        cells = aniso_cells(AnisoFamily((0.7, 0.7, 0.7)), j)
        assert {c.scale for c in cells} == {(j, j, j)} and len(cells) == 8 ** j


def test_aniso_children_examples():
    fam = AnisoFamily((1, 1))
    kids = aniso_children(R.unit(2), fam, 0)
    assert len(kids) == 4 and all(k.scale == (1, 1) for k in kids)
    kids = aniso_children(R.unit(2), AnisoFamily((1, 2)), 0)
    assert [k.scale for k in kids] == [(1, 0), (1, 0)]


@pytest.mark.parametrize("sigma", [(1, 2), (1, 1), (0.5, 1.7), (2, 0.3), (1, 2, 3)])
def test_aniso_children_bound(sigma):
    fam = AnisoFamily(sigma)
    d = len(sigma)
    bound = 2 ** d * 2 ** (d * fam.sigma_min / harmonic_mean(sigma))
    for j in range(9):
        K = aniso_cells(fam, j)[0]
        kids = aniso_children(K, fam, j)
        assert len(kids) <= bound
        assert sum(k.measure for k in kids) == K.measure


def test_aniso_children_rejects_off_grid():
    with pytest.raises(ValueError):
        aniso_children(R((1, 1), (0, 0)), AnisoFamily((1, 2)), 1)


def test_bit_budget():
    with pytest.raises(BudgetExceeded):
        aniso_cells(AnisoFamily((1,), bit_budget=10), 11)


def test_harmonic_mean():
    assert harmonic_mean((1, 2)) == pytest.approx(4 / 3)
    assert min((1, 2)) <= harmonic_mean((1, 2))


# --- trees ------------------------------------------------------------------

FIG = Node(2, Node(1, LEAF, Node(2, LEAF, LEAF)), Node(2, LEAF, LEAF))


def test_leaf_is_root():
    assert leaves(LEAF, 3) == [R.unit(3)]


def test_figure_partition():
    cells = leaves(FIG, 2)
    expected = [R((1, 1), (0, 0)), R((1, 2), (1, 0)), R((1, 2), (1, 1)),
                R((0, 2), (0, 2)), R((0, 2), (0, 3))]
    assert cells == expected
    assert encode_tree(FIG) == "2 1 L 2 L L 2 L L"
    assert [int(t) for t in encode_tree(FIG).split() if t != "L"] == [2, 1, 2, 2]
    assert decode_tree("2 1 L 2 L L 2 L L") == FIG


def test_leaf_encoding():
    assert encode_tree(LEAF) == "L" and decode_tree("L") == Leaf()


@pytest.mark.parametrize("text", ["", "1 L", "L L", "x", "3 L L"])
def test_decode_rejects_malformed(text):
    with pytest.raises(ValueError):
        decode_tree(text, d=2)


def random_tree(draw, d, depth):
    if depth == 0 or draw(st.booleans()):
        return LEAF
    return Node(draw(st.integers(1, d)), random_tree(draw, d, depth - 1), random_tree(draw, d, depth - 1))


@st.composite
def trees(draw, d=3, depth=6):
    return random_tree(draw, d, depth)


@settings(max_examples=1000)
@given(trees())
def test_encode_round_trip(t):
    assert decode_tree(encode_tree(t), 3) == t


@given(trees(d=2, depth=7))
def test_leaves_form_partition(t):
    cells = leaves(t, 2)
    assert sum(c.measure for c in cells) == 1
    assert n_leaves(t) == n_internal(t) + 1 == len(cells)
    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            assert a.disjoint(b)
    x = np.random.default_rng(0).random((200, 2))
    x[:10] = np.round(x[:10] * 8) / 8  # grid points on cell boundaries
    hits = sum(c.contains(x).astype(int) for c in cells)
    assert np.all(hits == 1)


@given(trees(d=2, depth=5))
def test_tree_from_cells_recovers_partition(t):
    cells = leaves(t, 2)
    assert set(leaves(tree_from_cells(cells, 2), 2)) == set(cells)


def test_grid_tree():
    assert len(leaves(grid_tree((2, 1)), 2)) == 8


# --- enumeration ------------------------------------------------------------

def test_enumerate_small_counts():
    assert len(list(enumerate_partitions(1, 1))) == 2
    assert len(list(enumerate_partitions(2, 1))) == 5


@pytest.mark.parametrize("depth,d", [(1, 1), (2, 1), (3, 1), (1, 2), (2, 2), (1, 3)])
def test_enumeration_matches_bruteforce(depth, d):
    ours = {frozenset((c.scale, c.pos) for c in leaves(t, d)) for t in enumerate_partitions(depth, d)}
    assert len(ours) == len(list(enumerate_partitions(depth, d)))
    assert ours == set(all_partitions(depth, d))


def test_enumeration_deduplicates_cut_order():
    # the 2x2 grid arises from cutting x then y or y then x
    parts = list(enumerate_partitions(1, 2))
    grids = [t for t in parts if n_leaves(t) == 4]
    assert len(grids) == 1


def test_enumeration_budget():
    with pytest.raises(BudgetExceeded):
        list(enumerate_partitions(4, 2, budget=1000))


@pytest.mark.parametrize("d,depth", [(1, 4), (2, 2), (2, 3)])
def test_partition_count_bound(d, depth):
    counts = {}
    for t in enumerate_partitions(depth, d, max_leaves=4 if depth == 3 else None):
        counts[n_leaves(t)] = counts.get(n_leaves(t), 0) + 1
    for D, c in counts.items():
        if D <= 4:
            assert c <= (4 * d) ** D


@pytest.mark.parametrize("D", range(1, 9))
def test_catalan_shapes(D):
    assert len(tree_shapes(D)) == catalan(D - 1) == binary_tree_shapes(D)
    assert catalan(D - 1) == math.comb(2 * (D - 1), D - 1) // D <= 4 ** D
