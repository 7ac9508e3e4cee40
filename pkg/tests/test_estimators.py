import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randclt import estimators as E
from randclt import fields as F
from randclt import regions as R
from randclt.errors import DegenerateVariance, MissingTruth, TooFewPoints, WindowTooSmall
from randclt.rng import FIELD, TAU, SeedRecord


def realization(values, origin=1, truth=None):
    """Hand-built 1-D realization with one component."""
    x = np.asarray(values, dtype=float).reshape(-1, 1)
    w = F.LatticeWindow((origin,), (x.shape[0],))
    model = F.ModelSpec(F.IidMarginal("normal"))
    return F.FieldRealization(w, x, model, SeedRecord(0, FIELD), truth)


def interval(n):
    return R.RegionFamily("interval").region(n)


def normal_field(n, s=0, components=1, mixing=None):
    m = F.ModelSpec(F.IidMarginal("normal"), components, mixing)
    return F.generate(m, F.LatticeWindow.interval(1, n), SeedRecord(s, FIELD))


# -- schedules ------------------------------------------------------------------


def test_schedule_rules():
    assert E.KnSchedule().k(10_000.0) == 100
    assert E.KnSchedule(alpha=0.5).k(10.0) == 4
    assert E.KnSchedule("proportional_to_measure", factor=0.5).k(11.0) == 6
    assert E.KnSchedule("explicit", values=(3, 5)).evaluate([10, 20]) == [3, 5]
    with pytest.raises(ValueError):
        E.KnSchedule("explicit", values=(5, 3))
    with pytest.raises(ValueError):
        E.KnSchedule("explicit", values=(3, 5)).evaluate([10])
    with pytest.raises(ValueError):
        E.KnSchedule(alpha=1.0)


# -- set moments ------------------------------------------------------------------


def test_set_moments_example():
    real = realization([1, 2, 3, 4])
    M, V = E.set_moments(real, interval(4))
    assert M == 2.5 and V == 1.25
    assert E.set_variance_raw(real, interval(4)) == (1.25, False)


def test_constant_field_is_degenerate():
    real = realization(np.full(50, 7.0))
    M, V = E.set_moments(real, interval(50))
    assert M == 7.0 and V == 0.0
    tau = E.draw_tau(interval(50), 10, seed=SeedRecord(0, TAU))
    with pytest.raises(DegenerateVariance):
        E.normalized_sum(real, tau)
    with pytest.raises(DegenerateVariance):
        E.lindeberg_fraction(real, interval(50), 10, 0.1)


def test_window_must_cover_region():
    with pytest.raises(WindowTooSmall):
        E.set_moments(realization([1, 2, 3]), interval(4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60))
def test_two_pass_and_raw_variance_agree(xs):
    real = realization(xs)
    reg = interval(len(xs))
    M, V = E.set_moments(real, reg)
    raw, _ = E.set_variance_raw(real, reg)
    x = np.asarray(xs)
    assert V >= 0
    assert V == pytest.approx(np.var(x), rel=1e-9, abs=1e-9)
    assert abs(raw - V) <= 1e-9 * max(1.0, float(np.mean(x * x)))


def test_weighted_moments_under_rescaled_density():
    real = realization(np.arange(1.0, 21.0))
    reg = interval(20)
    dens = R.SamplingDensity("rescaled", "triangular", scale=30.0)
    M, V = E.set_moments(real, reg, density=dens)
    t = np.arange(1.0, 21.0)
    w = 1 - t / 30
    w /= w.sum()
    assert M == pytest.approx(w @ t)
    assert V == pytest.approx(w @ (t - w @ t) ** 2)


# -- normalized sums -----------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.01, 100), b=st.floats(-100, 100), s=st.integers(0, 10_000))
def test_studentized_sum_affine_invariant(a, b, s):
    base = normal_field(200, s)
    x = base.values[:, 0]
    moved = realization(a * x + b)
    orig = realization(x)
    tau = E.draw_tau(interval(200), 15, seed=SeedRecord(s, TAU))
    s0 = E.normalized_sum(orig, tau)
    s1 = E.normalized_sum(moved, tau)
    # forming a*x + b and re-centering loses about |b| / (a sd) in relative accuracy
    cond = 1.0 + abs(b) / (a * x.std())
    assert np.max(np.abs(s0 - s1)) <= 1e-12 * cond * max(1.0, float(np.max(np.abs(s0))))


def test_conditional_moments_given_field():
    # given the field, the studentized sum has mean 0 and variance 1 under tau
    real = normal_field(500, 3)
    reg = interval(500)
    k = 20
    vals = np.array([E.normalized_sum(real, E.draw_tau(reg, k, seed=SeedRecord(4, TAU, (r,))))[0, 0]
                     for r in range(8000)])
    assert abs(vals.mean()) < 4 / math.sqrt(vals.size)
    assert abs(vals.var() - 1.0) < 4 * math.sqrt(2.0 / vals.size) * 1.2


def test_modes_and_missing_truth():
    real = normal_field(300, 1)
    tau = E.draw_tau(interval(300), 30, seed=SeedRecord(0, TAU))
    x = real.at(tau.sites[0, 0])
    M, V = E.set_moments(real, interval(300))
    got = {m: E.normalized_sum(real, tau, m)[0, 0] for m in E.MODES}
    assert got["studentized_Mn"] == pytest.approx((x - M).sum() / math.sqrt(30 * V))
    assert got["sigma_Mn"] == pytest.approx((x - M).sum() / math.sqrt(30))
    assert got["studentized_mu"] == pytest.approx(x.sum() / math.sqrt(30 * V))
    assert got["sigma_mu"] == pytest.approx(x.sum() / math.sqrt(30))
    bare = realization(real.values[:, 0])
    with pytest.raises(MissingTruth):
        E.normalized_sum(bare, tau, "sigma_mu")
    with pytest.raises(ValueError):
        E.normalized_sum(real, tau, "bogus")


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        E.draw_tau(interval(10), 1)


def test_draw_tau_shape_and_determinism():
    regs = [interval(50), interval(60)]
    a = E.draw_tau(regs, 7, w=3, seed=SeedRecord(9, TAU))
    b = E.draw_tau(regs, 7, w=3, seed=SeedRecord(9, TAU))
    assert a.sites.shape == (2, 3, 7, 1)
    assert np.array_equal(a.sites, b.sites)
    assert not np.array_equal(a.sites[0], a.sites[1])
    sh = E.draw_tau(regs[0], 7, w=2, seed=SeedRecord(9, TAU), d=3, shared=True)
    assert np.array_equal(sh.sites[0], sh.sites[2])


def test_classical_sum_matches_formula():
    real = normal_field(400, 2)
    x = real.values[:, 0]
    assert E.classical_sum(real, interval(400)) == pytest.approx(
        x.sum() / math.sqrt(400 * x.var()))


# -- Lindeberg fraction -------------------------------------------------------------------


def test_lindeberg_extremes_and_monotonicity():
    real = normal_field(2000, 5)
    reg = interval(2000)
    vals = [E.lindeberg_fraction(real, reg, 100, eps) for eps in (0.0, 0.01, 0.05, 0.1, 0.3)]
    assert vals[0] == pytest.approx(1.0)
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    ks = [E.lindeberg_fraction(real, reg, k, 0.05) for k in (1, 10, 100, 1000)]
    assert all(b <= a for a, b in zip(ks, ks[1:]))
    x = real.values[:, 0]
    eps_zero = np.max(np.abs(x - x.mean())) / math.sqrt(100 * x.var()) * 1.001
    assert E.lindeberg_fraction(real, reg, 100, eps_zero) == 0.0


def test_lindeberg_exhaustive_small_case():
    real = realization([0.0, 0.0, 0.0, 4.0])
    # M = 1, V = 3, deviations (-1, -1, -1, 3); cut = eps sqrt(k V)
    reg = interval(4)
    assert E.lindeberg_fraction(real, reg, 1, 1.0) == pytest.approx((9 / 4) / 3)
    assert E.lindeberg_fraction(real, reg, 1, 0.5) == pytest.approx(1.0)
    assert E.lindeberg_fraction(real, reg, 3, 1.0) == 0.0


# -- tuple, indicator and vector sums -----------------------------------------------------------


def test_tuple_values_and_sum():
    real = realization([1, 2, 3, 4, 5, 6])
    sites = np.array([[1], [3]])
    assert np.array_equal(E.tuple_values(real, sites, [[0], [1]], np.multiply), [2.0, 12.0])
    with pytest.raises(WindowTooSmall):
        E.tuple_values(real, np.array([[6]]), [[0], [1]], np.multiply)
    reg = interval(5)
    tau = E.draw_tau(reg, 4, seed=SeedRecord(1, TAU))
    got = E.tuple_parameter_sum(real, [[0], [1]], "product", 0.0, tau)[0, 0]
    y_all = np.arange(1, 6) * np.arange(2, 7)
    y = (tau.sites[0, 0, :, 0]) * (tau.sites[0, 0, :, 0] + 1)
    assert got == pytest.approx(y.sum() / (2 * y_all.std()))


def test_indicator_sum_limit_variance():
    real = normal_field(400, 8)
    reg = R.RegionFamily("interval").region(399)
    tau = E.draw_tau(reg, 50, seed=SeedRecord(2, TAU))
    got = E.indicator_cdf_sum(real, [[0], [1]], (0.0, 0.0), 0.25, tau, use_limit_variance=True)
    x = real.values[:, 0]
    t = tau.sites[0, 0, :, 0] - 1
    ind = ((x[t] <= 0) & (x[t + 1] <= 0)).astype(float)
    assert got[0, 0] == pytest.approx((ind - 0.25).sum() / (math.sqrt(50) * math.sqrt(0.1875)))
    with pytest.raises(DegenerateVariance):
        E.indicator_cdf_sum(real, [[0]], (0.0,), 1.0, tau, use_limit_variance=True)


def test_vector_sum_duplicated_components():
    real = normal_field(300, 4, components=2, mixing=[[1.0], [1.0]])
    tau = E.draw_tau(interval(300), 25, seed=SeedRecord(0, TAU), d=2, shared=True)
    v = E.vector_sum(real, tau)
    assert v[0, 0] == v[1, 0]
    unshared = E.draw_tau(interval(300), 25, seed=SeedRecord(0, TAU), d=2)
    with pytest.raises(ValueError):
        E.vector_sum(real, unshared)
    cov = E.vector_sum_covariance(np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]]))
    assert np.allclose(cov, [[1.0, 1.0], [1.0, 1.0]])


# -- growth-condition diagnostic -----------------------------------------------------------------


def test_cond17_shrinks_for_sublinear_schedule_only():
    model = F.ModelSpec(F.IidMarginal("normal"))
    fam = R.RegionFamily("interval")
    idx = [100, 400, 1600, 6400]
    sub = E.cond17_diagnostic(model, fam, E.KnSchedule(alpha=0.5), idx, n_rep=200, master_seed=1)
    assert sub.shrinking and sub.slope == pytest.approx(-0.25, abs=0.08)
    lin = E.cond17_diagnostic(model, fam, E.KnSchedule("proportional_to_measure"), idx,
                              n_rep=200, master_seed=1)
    assert not lin.shrinking
    # sqrt(k)(M - mu) with k = lambda is exactly N(0, 1); its 0.95 quantile is 1.96
    assert np.all(np.abs(lin.q95 - 1.96) < 0.4)


@pytest.mark.parametrize("name,f", [("x", lambda v: v), ("x2", lambda v: v * v),
                                    ("indicator", lambda v: (v <= 0.3).astype(float))])
def test_random_point_average_matches_set_average(name, f):
    real = normal_field(1000, 12)
    reg = interval(1000)
    tau = E.draw_tau(reg, 100_000, seed=SeedRecord(12, TAU))
    y = f(real.at(tau.sites[0, 0]))
    exact = float(np.mean(f(real.values[:, 0])))
    assert abs(y.mean() - exact) < 4 * y.std() / math.sqrt(y.size)


def test_vector_sum_one_component_reduces_to_scaled_studentized():
    real = normal_field(500, 13)
    tau = E.draw_tau(interval(500), 40, w=2, seed=SeedRecord(13, TAU))
    V = E.set_variance(real, interval(500))
    assert np.allclose(E.vector_sum(real, tau), math.sqrt(V) * E.normalized_sum(real, tau))


def test_replicated_blocks_correlation_band():
    real_seeds = range(2000)
    reg = interval(300)
    vals = np.empty((2000, 3))
    model = F.ModelSpec(F.IidMarginal("normal"))
    for r in real_seeds:
        real = F.generate(model, F.LatticeWindow.interval(1, 300), SeedRecord(14, FIELD, (r,)),
                          with_truth=False)
        tau = E.draw_tau(reg, 20, w=3, seed=SeedRecord(14, TAU, (r,)))
        vals[r] = E.normalized_sum(real, tau)[0]
    r = np.corrcoef(vals, rowvar=False)[np.triu_indices(3, 1)]
    assert np.all(np.abs(r) < 4 / math.sqrt(2000) * 1.5)


def test_cond17_constant_field_is_zero():
    model = F.ModelSpec(F.IidMarginal("constant", {"c": 2.0}))
    rep = E.cond17_diagnostic(model, R.RegionFamily("interval"), E.KnSchedule(), [10, 100],
                              n_rep=20)
    assert np.all(rep.samples == 0.0) and not rep.shrinking
    assert rep.ks == (4, 10)
