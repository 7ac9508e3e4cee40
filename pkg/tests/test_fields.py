import math

import numpy as np
import pytest
from scipy import stats

from randclt import fields as F
from randclt.errors import InvalidModel, OutOfWindow, UnknownTruth
from randclt.rng import FIELD, SeedRecord


def seed(i=0, *idx):
    return SeedRecord(i, FIELD, idx)


def iid_normal(components=1, mixing=None):
    return F.ModelSpec(F.IidMarginal("normal", {"loc": 0.0, "scale": 1.0}), components, mixing)


# -- windows -------------------------------------------------------------------


def test_window_shape_and_indexing():
    w = F.LatticeWindow((0, 5), (3, 4))
    assert w.size == 12 and w.dim == 2
    assert w.lattice_native
    sites = w.sites()
    assert sites.shape == (12, 2)
    assert np.array_equal(sites[0], [0, 5]) and np.array_equal(sites[-1], [2, 8])
    assert np.array_equal(w.flat_index(sites), np.arange(12))
    with pytest.raises(OutOfWindow):
        w.flat_index([[3, 5]])
    with pytest.raises(ValueError):
        F.LatticeWindow((0,), (0,))


def test_window_padding_and_cover():
    w = F.LatticeWindow.interval(1, 10)
    p = w.padded(2, 3)
    assert tuple(p.lower) == (-1,) and tuple(p.upper) == (13,)
    assert p.covers(w) and not w.covers(p)
    assert not F.LatticeWindow((0,), (5,), spacing=0.5).lattice_native


# -- generation ------------------------------------------------------------------


def test_constant_field_everywhere():
    m = F.ModelSpec(F.IidMarginal("constant", {"c": 3.5}))
    real = F.generate(m, F.LatticeWindow.interval(-4, 50), seed())
    assert np.all(real.values == 3.5)
    assert F.evaluate(real, 7) == 3.5


def test_ma_unit_kernel_is_standard_normal():
    m = F.ModelSpec(F.GaussianMA({0: 1.0}))
    real = F.generate(m, F.LatticeWindow.interval(0, 100_000), seed(3))
    assert 0.98 <= real.values.var() <= 1.02


def test_coboundary_partial_sums_telescope():
    m = F.ModelSpec(F.RotationCoboundary())
    real = F.generate(m, F.LatticeWindow.interval(1, 20_000), seed(5))
    partial = np.cumsum(real.values[:, 0])
    assert np.max(np.abs(partial)) <= 2.0 + 1e-9
    n = np.arange(1, partial.size + 1)
    assert np.all(np.abs(partial) / np.sqrt(n) <= 2.0 / np.sqrt(n) + 1e-9)


def test_generation_is_deterministic_and_read_only():
    m = F.ModelSpec(F.AR1(0.7))
    w = F.LatticeWindow.interval(0, 500)
    a, b = F.generate(m, w, seed(9)), F.generate(m, w, seed(9))
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, F.generate(m, w, seed(10)).values)
    with pytest.raises(ValueError):
        a.values[0, 0] = 1.0


def test_evaluate_pure_and_out_of_window():
    real = F.generate(iid_normal(), F.LatticeWindow.interval(0, 20), seed(1))
    assert F.evaluate(real, 4) == F.evaluate(real, 4)
    with pytest.raises(OutOfWindow):
        F.evaluate(real, 20)


def test_shifted_window_same_marginal_law():
    m = F.ModelSpec(F.GaussianMA({0: 1.0, 1: 0.5}))
    a = F.generate(m, F.LatticeWindow.interval(0, 10_000), seed(1)).values[:, 0]
    b = F.generate(m, F.LatticeWindow.interval(777, 10_000), seed(2)).values[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_ma_2d_and_autocovariance():
    v = F.GaussianMA({(0, 0): 1.0, (1, 0): 0.5, (0, 1): -0.5})
    m = F.ModelSpec(v)
    assert m.dim == 2
    assert v.autocovariance((0, 0)) == pytest.approx(1.5)
    assert v.autocovariance((1, 0)) == pytest.approx(0.5)
    assert v.autocovariance((1, -1)) == pytest.approx(-0.25)
    real = F.generate(m, F.LatticeWindow((0, 0), (300, 300)), seed(4))
    g = real.grid()
    lag = np.mean(g[1:, :] * g[:-1, :])
    assert abs(lag - 0.5) < 4 * math.sqrt(2.0 / g.size) * 2


def test_invalid_models():
    with pytest.raises(InvalidModel):
        F.AR1(1.0)
    with pytest.raises(InvalidModel):
        F.GaussianMA({})
    with pytest.raises(InvalidModel):
        F.FiniteMarkov(((0.5, 0.4), (0.5, 0.5)), (0.0, 1.0))
    with pytest.raises(InvalidModel):
        F.FiniteMarkov(((1.0, 0.0), (0.0, 1.0)), (0.0, 1.0))   # not irreducible
    with pytest.raises(InvalidModel):
        F.IidMarginal("cauchy", {})
    with pytest.raises(InvalidModel):
        F.generate(F.ModelSpec(F.AR1(0.3)), F.LatticeWindow((0, 0), (4, 4)), seed())


def test_derived_tuple_values_and_window_check():
    base = iid_normal()
    m = F.ModelSpec(F.DerivedTuple(base, ((0,), (1,)), "product"))
    w = F.LatticeWindow.interval(0, 200)
    real = F.generate(m, w, seed(2))
    raw = F.generate(base, w.padded(0, 1), seed(2).child(0))
    x = raw.values[:, 0]
    assert np.allclose(real.values[:, 0], x[:-1] * x[1:])
    with pytest.raises(InvalidModel):
        F.generate(F.ModelSpec(F.DerivedTuple(base, ((0, 0),), "identity")), w, seed())


def test_shared_noise_duplicates_component():
    real = F.generate(iid_normal(2, [[1.0], [1.0]]), F.LatticeWindow.interval(0, 100), seed(1))
    assert np.array_equal(real.values[:, 0], real.values[:, 1])
    indep = F.generate(iid_normal(2), F.LatticeWindow.interval(0, 100), seed(1))
    assert not np.array_equal(indep.values[:, 0], indep.values[:, 1])


# -- truth oracles -----------------------------------------------------------------


def test_truth_examples():
    t = F.marginal_truth(F.ModelSpec(F.GaussianMA({-1: 0.5, 0: 0.5})))
    assert t.mean[0] == 0.0 and t.variance[0] == pytest.approx(0.5)
    t = F.marginal_truth(F.ModelSpec(F.AR1(0.5, 0.75)))
    assert t.variance[0] == pytest.approx(1.0)
    t = F.marginal_truth(F.ModelSpec(F.RotationCoboundary()))
    assert t.mean[0] == 0.0
    with pytest.raises(UnknownTruth):
        t.marginal_cdf(0)


def test_coboundary_variance_formula_matches_simulation():
    for g in ("sin2pi", "sawtooth", "indicator_half"):
        m = F.ModelSpec(F.RotationCoboundary(g=g))
        t = F.marginal_truth(m)
        draws = np.array([F.generate(m, F.LatticeWindow.interval(0, 1), seed(i), with_truth=False).values[0, 0]
                          for i in range(10_000)])
        se = math.sqrt(2.0 / draws.size) * t.variance[0] + 1e-12
        assert abs(draws.var() - t.variance[0]) < 5 * se + 0.01


def test_opaque_tuple_truth_is_estimated():
    m = F.ModelSpec(F.DerivedTuple(iid_normal(), ((0,), (1,)), lambda a, b: np.maximum(a, b)))
    t = F.marginal_truth(m)
    assert t.estimated
    # E max(Z1, Z2) = 1/sqrt(pi)
    assert abs(t.mean[0] - 1 / math.sqrt(math.pi)) < 0.02
    with pytest.raises(UnknownTruth):
        F.marginal_truth(m, allow_estimate=False)


def test_tuple_truth_closed_forms():
    base = F.ModelSpec(F.GaussianMA({0: 1.0, 1: 0.6}))
    prod = F.marginal_truth(F.ModelSpec(F.DerivedTuple(base, ((0,), (1,)), "product")))
    assert prod.mean[0] == pytest.approx(0.6)
    assert prod.variance[0] == pytest.approx(1.36 ** 2 + 0.36)
    ind = F.marginal_truth(F.ModelSpec(F.DerivedTuple(iid_normal(), ((0,), (1,)), "indicator_le",
                                                      (0.0, 0.0))))
    assert ind.mean[0] == pytest.approx(0.25)
    assert ind.variance[0] == pytest.approx(0.1875)


MODELS = {
    "iid_exponential": F.ModelSpec(F.IidMarginal("exponential", {"scale": 2.0})),
    "gaussian_ma": F.ModelSpec(F.GaussianMA({0: 1.0, 1: 0.6, 2: 0.3}, mean=1.0)),
    "ar1": F.ModelSpec(F.AR1(0.8, 0.5, 0.2)),
    "coboundary": F.ModelSpec(F.RotationCoboundary(g="sawtooth")),
    "markov": F.ModelSpec(F.FiniteMarkov(((0.9, 0.1, 0.0), (0.2, 0.5, 0.3), (0.1, 0.0, 0.9)),
                                         (-1.0, 0.5, 2.0))),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_truth_consistency(name):
    m = MODELS[name]
    t = F.marginal_truth(m)
    real = F.generate(m, F.LatticeWindow.interval(0, 200_000), seed(13))
    x = real.values[:, 0]
    # dependence inflates the standard error; use batch means for an honest SE
    batches = x.reshape(200, -1).mean(axis=1)
    se_mean = batches.std(ddof=1) / math.sqrt(batches.size)
    assert abs(x.mean() - t.mean[0]) < 4 * se_mean
    bv = ((x.reshape(200, -1) - x.mean()) ** 2).mean(axis=1)
    se_var = bv.std(ddof=1) / math.sqrt(bv.size)
    assert abs(x.var() - t.variance[0]) < 4 * se_var


@pytest.mark.parametrize("name", sorted(MODELS))
def test_stationarity_two_sample(name):
    m = MODELS[name]
    shifts = np.random.default_rng(5).integers(1, 40, size=5)
    w = F.LatticeWindow.interval(0, 41)
    vals = np.stack([F.generate(m, w, seed(21, i), with_truth=False).values[:, 0] for i in range(10_000)])
    # discrete marginals are computed by floating differences; merge rounding noise
    vals = np.round(vals, 9)
    for s in shifts:
        assert stats.ks_2samp(vals[:, 0], vals[:, s], method="asymp").pvalue > 0.01


def test_joint_cdf_gaussian_and_iid():
    base = F.ModelSpec(F.GaussianMA({0: 1.0, 1: 1.0}))
    J = F.joint_cdf(base, [[0], [1]])
    ref = stats.multivariate_normal([0, 0], [[2, 1], [1, 2]]).cdf([0.3, -0.2])
    assert abs(J(np.array([[0.3, -0.2]]))[0] - ref) < 1e-6
    Ji = F.joint_cdf(iid_normal(), [[0], [2]])
    assert Ji(np.array([[0.0, 0.0]]))[0] == pytest.approx(0.25)
    assert Ji(np.array([[0.0, np.inf]]))[0] == pytest.approx(0.5)
    # repeated offset collapses to min
    Jr = F.joint_cdf(iid_normal(), [[0], [0]])
    assert Jr(np.array([[0.5, -0.5]]))[0] == pytest.approx(stats.norm.cdf(-0.5))
