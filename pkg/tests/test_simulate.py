from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate
from scipy import stats as sps

from dyadpoly.dyadic import LEAF, DyadicRectangle, Node, enumerate_partitions, leaves
from dyadpoly.estimate import PenaltyConfig, degree_order, fit, make_config
from dyadpoly.legendre import PiecewisePoly, l2_dist
from dyadpoly.simulate import (SUITE, TestDensity, basis_moments, builtin_density, calibrate,
                               exact_risk, fixed_model_fit, fixed_model_risk, from_pieces,
                               minimax_slope, oracle_dp, oracle_risk, oracle_suite, product_smooth,
                               quadrature_risk, rate_study, replicate_risks, rng, sample_density,
                               spike, step_density, takagi, uniform)

from oracles import gauss_box

R = DyadicRectangle


def marginal_cdf(dens: TestDensity, axis: int, level: int = 12):
    """Marginal CDF of ``dens`` along ``axis`` by composite Gauss quadrature."""
    h = 2.0 ** -level
    edges = np.arange(2 ** level + 1) * h
    t, w = np.polynomial.legendre.leggauss(6)
    nodes = (edges[:-1, None] + 0.5 * (t + 1) * h).ravel()
    if dens.d == 1:
        mass = dens(nodes[:, None])
    else:
        # composite rule on 32 slabs per remaining axis resolves bumps down to scale 5
        cells = 32
        lo = np.arange(cells) / cells
        to, wo = np.polynomial.legendre.leggauss(6)
        pts1 = (lo[:, None] + 0.5 * (to + 1) / cells).ravel()
        wts1 = np.tile(0.5 * wo / cells, cells)
        grids = np.meshgrid(*[pts1] * (dens.d - 1), indexing="ij")
        other = np.stack([g.ravel() for g in grids], -1)
        wother = np.ones(1)
        for _ in range(dens.d - 1):
            wother = np.multiply.outer(wother, wts1).ravel()
        mass = np.zeros(len(nodes))
        for p, wp in zip(other, wother):
            full = np.insert(np.repeat(p[None, :], len(nodes), 0), axis, nodes, axis=1)
            mass += wp * dens(full)
    mass = mass.reshape(-1, 6) @ (0.5 * h * w)
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    return lambda x: np.interp(x, edges, cum)


# --- densities --------------------------------------------------------------

@pytest.mark.parametrize("name,d", [(n, 1) for n in SUITE] + [("step", 2), ("spike", 2), ("product", 2)])
def test_builtin_densities_are_valid(name, d):
    dens = builtin_density(name, d)
    dens.check()
    assert dens.d == d and dens.bound >= dens.sup_norm() * (1 - 1e-9)


def test_builtin_density_errors():
    with pytest.raises(KeyError):
        builtin_density("nope")
    with pytest.raises(ValueError):
        builtin_density("takagi", 2)


def test_invalid_pieces_rejected():
    half = PiecewisePoly(LEAF, 1, (np.array([0.5]),))
    with pytest.raises(ValueError, match="integrates"):
        from_pieces(half)
    neg = PiecewisePoly(LEAF, 1, (np.array([1.0, 1.0]),))
    with pytest.raises(ValueError, match="negative"):
        from_pieces(neg)


def test_product_marginal_validation():
    with pytest.raises(ValueError):
        product_smooth([[0.5, -0.1, 0.6]])


def test_takagi_properties():
    dens = takagi(9, 1.75, 3)
    assert dens.mass() == pytest.approx(1.0, abs=1e-12)
    assert dens.sigma == (1.0,)
    assert max(K.scale[0] for K in dens.pieces.cells) == 12


# --- sampling ---------------------------------------------------------------

def test_uniform_mean_band():
    x = sample_density(uniform(2), 100, 3)
    assert x.shape == (100, 2)
    assert np.all(np.abs(x.mean(axis=0) - 0.5) < 5 / math.sqrt(100))


def test_support_of_half_density():
    dens = step_density((2.0, 0.0))
    x = dens.sample(500, 1)
    assert np.all(x <= 0.5)


def test_seed_reproducibility():
    for name in SUITE:
        dens = builtin_density(name)
        np.testing.assert_array_equal(dens.sample(50, 7), dens.sample(50, 7))
    assert not np.array_equal(rng(1, 0).random(5), rng(1, 1).random(5))


def test_small_n_rejected():
    with pytest.raises(ValueError):
        uniform().sample(3)


def test_envelope_violation_raises():
    dens = step_density()
    dens.bound = 1.0
    with pytest.raises(ValueError, match="envelope"):
        dens.sample(100)


CRIT_1PCT = 1.63 / math.sqrt(10_000)


@pytest.mark.parametrize("name,d", [(n, 1) for n in SUITE] + [("step", 2), ("product", 2), ("spike", 2)])
def test_kolmogorov_smirnov(name, d):
    dens = builtin_density(name, d)
    x = dens.sample(10_000, 5)
    for axis in range(d):
        cdf = marginal_cdf(dens, axis)
        stat = sps.kstest(x[:, axis], cdf).statistic
        assert stat < CRIT_1PCT, (name, axis, stat)


# --- moments and risks ------------------------------------------------------

def test_basis_moments_match_quadrature():
    dens = spike(1)
    K = R((2,), (1,))
    mean, second = basis_moments(dens, K, (3,))
    from dyadpoly.legendre import basis_matrix
    pts, w = gauss_box(K.lower, K.upper, 12)
    B = basis_matrix(K, (3,), pts, mask=False)
    # split the cell so that the quadrature resolves the bump pieces
    ref_mean = np.zeros(4)
    ref_second = np.zeros(4)
    for piece in dens.pieces.cells:
        if piece.disjoint(K):
            continue
        lo, hi = np.maximum(piece.lower, K.lower), np.minimum(piece.upper, K.upper)
        p, ww = gauss_box(lo, hi, 12)
        Bp = basis_matrix(K, (3,), p, mask=False)
        s = dens(p)
        ref_mean += (ww * s) @ Bp
        ref_second += (ww * s) @ Bp ** 2
    np.testing.assert_allclose(mean.ravel(), ref_mean, atol=1e-12)
    np.testing.assert_allclose(second.ravel(), ref_second, atol=1e-11)
    assert B.shape == (len(pts), 4)


def test_exact_risk_two_paths():
    dens = takagi(6, 1.5)
    x = dens.sample(2000, 2)
    model = fit(x, J_star=4)
    direct = l2_dist(model.density, dens.pieces) ** 2
    assert exact_risk(model, dens) == pytest.approx(direct, rel=1e-9, abs=1e-14)
    q, order, nodes = quadrature_risk(model.density, dens, 6, 8)
    assert q == pytest.approx(direct, rel=1e-9) and order == 6 and nodes > 0


def test_exact_risk_quadrature_path():
    dens = dataclasses.replace(product_smooth([[0.1, 0.5, 0.2, 0.2]]), pieces=None)
    model = fit(dens.sample(1000, 1), J_star=3)
    f = lambda t: float((dens(np.array([[t]])) - model(np.array([[t]])))[0] ** 2)
    ref = sum(integrate.quad(f, K.lower[0], K.upper[0], epsabs=1e-14, epsrel=1e-12)[0] for K in model.cells)
    assert exact_risk(model, dens) == pytest.approx(ref, rel=1e-9)


def test_uniform_fit_zero_risk():
    x = uniform().sample(500, 0)
    model = fixed_model_fit(x, LEAF, [(0,)])
    assert exact_risk(model, uniform()) < 1e-28


def test_fixed_model_decomposition_small():
    dens = step_density()
    tree = Node(1, LEAF, LEAF)
    cells = leaves(tree, 1)
    out = fixed_model_risk(dens, cells, [(0,), (1,)], 500)
    assert out["bias"] == pytest.approx(0.0, abs=1e-14)
    # density c on a half: E Phi_0 = c / sqrt2, E Phi_0^2 = c, and Phi_1 has mean 0, second moment c
    var = sum(c - c * c / 2 for c in (1.6, 0.4)) + 0.4
    assert out["variance"] == pytest.approx(var / 500, rel=1e-12)


def test_fixed_model_mc_mean_and_upper_bound():
    dens = takagi(6, 1.5)
    tree = Node(1, Node(1, LEAF, LEAF), LEAF)
    degs = [(1,), (0,), (1,)]
    n, reps = 300, 300
    risks = np.array([exact_risk(fixed_model_fit(dens.sample(n, rng(4, i)), tree, degs), dens)
                      for i in range(reps)])
    out = fixed_model_risk(dens, leaves(tree, 1), degs, n)
    se = risks.std(ddof=1) / math.sqrt(reps)
    assert abs(risks.mean() - out["risk"]) < 4 * se
    dim = sum(math.prod(g + 1 for g in r) for r in degs)
    assert risks.mean() <= out["bias"] + 3 * dens.bound * dim / n + 4 * se


# --- oracles ----------------------------------------------------------------

def test_oracle_uniform_is_zero():
    orc = oracle_risk(uniform(), 500, PenaltyConfig((1,), 2))
    assert orc.risk == pytest.approx(0.0, abs=1e-15)
    assert orc.tree == LEAF and orc.degrees == [(0,)]


def test_oracle_step_splits_at_half():
    orc = oracle_risk(step_density(), 500, PenaltyConfig((1,), 2))
    assert orc.tree == Node(1, LEAF, LEAF)
    assert orc.degrees == [(0,), (0,)]
    assert orc.n_models == 5


@pytest.mark.parametrize("dens", [takagi(8), spike(1)])
def test_oracle_below_every_model(dens):
    n, cfg = 700, PenaltyConfig((2,), 3)
    orc = oracle_risk(dens, n, cfg)
    for tree in enumerate_partitions(3, 1):
        cells = leaves(tree, 1)
        for degs in [[r] * len(cells) for r in degree_order((2,))]:
            assert orc.risk <= fixed_model_risk(dens, cells, degs, n)["risk"] + 1e-14
    assert orc.risk == pytest.approx(orc.bias + orc.variance, rel=1e-10)


@pytest.mark.parametrize("dens,J", [(step_density(), 3), (takagi(8), 4), (step_density(d=2), 2),
                                    (spike(2, level=2, center=1), 2)])
def test_oracle_dp_matches_enumeration(dens, J):
    cfg = PenaltyConfig((1,) * dens.d, J)
    assert oracle_dp(dens, 800, cfg) == pytest.approx(oracle_risk(dens, 800, cfg).risk, rel=1e-10, abs=1e-15)


def test_oracle_dimension_mismatch():
    with pytest.raises(ValueError):
        oracle_risk(uniform(2), 100, PenaltyConfig((1,), 1))


# --- studies ----------------------------------------------------------------

def test_replicate_risks_threads_do_not_change_results(tmp_path):
    dens = step_density()
    cfg = make_config(400, 1)
    a = replicate_risks(dens, 400, cfg, 6, seed=3)
    b = replicate_risks(dens, 400, cfg, 6, seed=3, threads=3)
    np.testing.assert_array_equal(a.risks, b.risks)
    assert np.all(a.risks >= 0) and a.se > 0
    path = tmp_path / "risks.csv"
    a.write_csv(path)
    text = path.read_text()
    assert "# rng: numpy.random.Philox" in text
    rows = list(csv.reader(l for l in text.splitlines() if not l.startswith("#")))
    assert rows[0] == ["n", "replicate", "risk"] and len(rows) == 7


def test_rate_study_shape(tmp_path):
    study = rate_study(step_density(), [256, 512, 1024], replicates=4, seed=1, with_oracle=True)
    assert len(study.reports) == 3 and math.isfinite(study.slope)
    assert study.expected_slope == pytest.approx(-1 / 2)
    assert study.oracle_slope is not None
    study.write_csv(tmp_path / "rates.csv")
    assert "slope" in (tmp_path / "rates.csv").read_text()


def test_rate_study_needs_sigma():
    dens = dataclasses.replace(product_smooth([[0.2, 0.3, 0.5]]), sigma=None)
    with pytest.raises(ValueError):
        rate_study(dens, [256, 512], replicates=2)


def test_minimax_slope_examples():
    assert minimax_slope((math.inf,), 1) == -1.0
    assert minimax_slope((1,), 1) == pytest.approx(-2 / 3)
    assert minimax_slope((1, 1), 2) == pytest.approx(-1 / 2)
    assert minimax_slope((1, 2), 2) == pytest.approx(-4 / 7)


def test_calibrate_single_point_grid():
    k = (3.0, 0.5, 0.05, 0.05, 0.05)
    cal = calibrate([k], oracle_suite(1)[:2], 400, replicates=3, seed=2, J_star=3)
    assert cal.best == k and cal.ratios.shape == (1, 2)
    assert np.all(np.isfinite(cal.ratios)) and np.all(cal.ratios > 0)


def test_calibrate_picks_argmin(tmp_path):
    grid = [(0.5, 0.1, 0.01, 0.01, 0.01), (4.0, 0.5, 0.05, 0.05, 0.05), (50.0, 5.0, 1.0, 1.0, 1.0)]
    cal = calibrate(grid, oracle_suite(1), 500, replicates=4, seed=3, J_star=4)
    i = grid.index(cal.best)
    assert all(cal.mean_ratio[i] <= m for m in cal.mean_ratio)
    cal.write_csv(tmp_path / "cal.csv")
    lines = [l for l in (tmp_path / "cal.csv").read_text().splitlines() if not l.startswith("#")]
    header = next(csv.reader(lines))
    assert header[:5] == ["k1", "k2", "k3", "k4", "k5"] and header[-1] == "mean_ratio"
    assert all(h.startswith("ratio_") for h in header[5:-1])


def test_calibrate_rejects_zero_oracle():
    with pytest.raises(ValueError, match="oracle risk is zero"):
        calibrate([(1, 1, 1, 1, 1)], [uniform()], 200, replicates=1)
    with pytest.raises(ValueError):
        calibrate([], oracle_suite(1), 200)
