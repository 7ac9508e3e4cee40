import functools
import math

import numpy as np
import pytest
from scipy import special, stats

from randclt import estimators as E
from randclt import fields as F
from randclt import limits as L
from randclt import regions as R
from randclt.errors import (DimensionMismatch, InsufficientSignal, InvalidDelta, NonScalarSample,
                            ReplicationAborted)
from randclt.rng import FIELD, TAU, SeedRecord, stream

REGION = R.RegionFamily("interval").region(400)


def clt_task(rep, dist="normal", params=None, seed=0, k=20):
    model = F.ModelSpec(F.IidMarginal(dist, params or {}))
    real = F.generate(model, F.LatticeWindow.interval(1, 400), SeedRecord(seed, FIELD, (rep,)),
                      with_truth=False)
    tau = E.draw_tau(REGION, k, seed=SeedRecord(seed, TAU, (rep,)))
    return E.normalized_sum(real, tau)[0, 0]


# -- replication ------------------------------------------------------------------


def test_constant_field_aborts_with_summary():
    task = functools.partial(clt_task, dist="constant", params={"c": 2.0})
    with pytest.raises(ReplicationAborted) as info:
        L.replicate(task, 100)
    assert info.value.summary == {"DegenerateVariance": 100}
    assert "DegenerateVariance" in str(info.value)


def test_sparse_failures_are_tolerated():
    def task(i):
        if i == 7:
            raise DimensionMismatch("boom")
        return float(i)
    s = L.replicate(task, 200)
    assert s.n_rep == 199 and s.failures == {"DimensionMismatch": 1}


def test_replication_is_deterministic_across_jobs():
    a = L.replicate(functools.partial(clt_task, seed=3), 100)
    b = L.replicate(functools.partial(clt_task, seed=3), 100)
    c = L.replicate(functools.partial(clt_task, seed=3), 100, jobs=3)
    assert a.values.tobytes() == b.values.tobytes() == c.values.tobytes()
    d = L.replicate(functools.partial(clt_task, seed=4), 100)
    assert a.values.tobytes() != d.values.tobytes()


def test_minimum_replications_and_finite_values():
    with pytest.raises(ValueError):
        L.replicate(lambda i: 0.0, 50)
    with pytest.raises(ValueError):
        L.ReplicationSample("e", "s", 1, 1, np.array([0.0, np.nan]))


def test_iid_studentized_sample_mean():
    s = L.replicate(functools.partial(clt_task, seed=5), 2000)
    assert abs(s.values.mean()) < 4 / math.sqrt(2000)


# -- goodness of fit ----------------------------------------------------------------


def test_ks_against_examples():
    u = stream(1, "test").random(2000)
    d, p = L.ks_against(stats.norm.ppf(u), special.ndtr)
    assert d < 1.63 / math.sqrt(2000)
    d, _ = L.ks_against(np.zeros(500), special.ndtr)
    assert d >= 0.5
    d, p = L.ks_against(stream(2, "test").standard_normal(1000) + 3.0)
    assert d > 0.8 and p < 1e-12
    with pytest.raises(NonScalarSample):
        L.ks_against(np.zeros((100, 2)))


def test_ks_against_matches_scipy_distance():
    x = stream(3, "test").standard_normal(777)
    assert L.ks_distance(x, special.ndtr) == pytest.approx(stats.kstest(x, "norm").statistic,
                                                           abs=1e-14)


def test_ks_null_rejection_rate():
    gen = stream(4, "test")
    rejections = sum(L.ks_against(gen.standard_normal(1000))[1] < 0.05 for _ in range(200))
    assert 0.02 <= rejections / 200 <= 0.09


def test_delta_n_estimate():
    gen = stream(5, "test")
    small = L.delta_n_estimate(gen.standard_normal(1000), seed=SeedRecord(0, "bootstrap"))
    big = L.delta_n_estimate(gen.standard_normal(16_000), seed=SeedRecord(0, "bootstrap"))
    assert big.value < small.value
    assert 0 < big.se < small.se
    # DKW: Delta < sqrt(log(2/0.001) / (2N)) with probability 0.999
    assert big.value < math.sqrt(math.log(2000) / 32_000)
    assert L.delta_n_estimate(np.ones(200)).value >= 0.5
    again = L.delta_n_estimate(gen.standard_normal(1000), seed=SeedRecord(7, "bootstrap"))
    assert again.n_rep == 1000


def test_delta_decreases_with_k_on_skewed_iid():
    ks = [25, 100, 400]
    deltas = []
    for k in ks:
        s = L.replicate(functools.partial(clt_task, dist="exponential", seed=6, k=k), 4000)
        deltas.append(L.delta_n_estimate(s, seed=SeedRecord(k, "bootstrap")))
    inversions = sum(b.value > a.value + 2 * math.hypot(a.se, b.se)
                     for a, b in zip(deltas, deltas[1:]))
    assert inversions == 0
    assert deltas[-1].value < deltas[0].value


# -- rate bound and slopes ----------------------------------------------------------------


def test_rate_bound_plug_in_and_halving():
    moment = 2 * math.sqrt(2 / math.pi)
    b = L.rate_bound(100, 0.5, 1.0, moment, 0.0)
    assert b.variance_term == 0.0
    assert b.k_term == pytest.approx(100 ** -0.5 * 0.5 ** -1.5 * moment)
    assert L.rate_bound(400, 0.5, 1.0, moment, 0.0).k_term == pytest.approx(b.k_term / 2, rel=1e-15)
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(InvalidDelta):
            L.rate_bound(100, 0.5, bad, moment, 0.0)


def test_variance_rarely_below_half_sigma():
    def task(rep):
        m = F.ModelSpec(F.IidMarginal("normal"))
        real = F.generate(m, F.LatticeWindow.interval(1, 10_000), SeedRecord(8, FIELD, (rep,)),
                          with_truth=False)
        return E.set_variance(real, R.RegionFamily("interval").region(10_000))
    v = L.replicate(task, 2000).values
    assert np.mean(v < 0.5) == 0.0


def test_rate_slope_synthetic():
    k = np.array([25.0, 100, 400, 1600])
    exact = L.RateCurve(k, k ** -0.5, 0.01 * k ** -0.5)
    fit = L.rate_slope(exact)
    assert fit.slope == pytest.approx(-0.5, abs=1e-9) and fit.consistent
    lo, hi = fit.band
    assert lo <= fit.slope <= hi
    flat = L.rate_slope(L.RateCurve(k, np.full(4, 0.2), np.full(4, 0.01)))
    assert flat.slope == pytest.approx(0.0, abs=1e-12) and not flat.consistent
    with pytest.raises(InsufficientSignal):
        L.rate_slope(L.RateCurve(k[:3], k[:3] ** -0.5, np.zeros(3)))
    with pytest.raises(InsufficientSignal):
        L.rate_slope(L.RateCurve(k, np.full(4, 0.01), np.full(4, 0.01)))


def test_rate_curve_from_estimates():
    est = [L.DeltaEstimate(0.1, 0.01, 100), L.DeltaEstimate(0.05, 0.01, 100)]
    c = L.RateCurve.from_estimates([10, 40], est)
    assert np.array_equal(c.delta, [0.1, 0.05]) and np.array_equal(c.k, [10.0, 40.0])


# -- covariance ---------------------------------------------------------------------------


def test_covariance_check_duplicated_and_independent():
    gen = stream(9, "test")
    z = gen.standard_normal(4000)
    dup = L.covariance_check(np.stack([z, z], 1), [[1, 1], [1, 1]])
    assert dup.passed and dup.threshold == pytest.approx(6 / math.sqrt(4000))
    ind = L.covariance_check(gen.standard_normal((4000, 3)), np.eye(3))
    assert ind.passed
    wrong = L.covariance_check(np.stack([z, z], 1), np.eye(2))
    assert not wrong.passed
    one = L.covariance_check(2 * z, [[4.0]])
    assert one.passed and one.covariance.shape == (1, 1)
    with pytest.raises(DimensionMismatch):
        L.covariance_check(np.stack([z, z], 1), np.eye(3))


def test_max_pairwise_correlation():
    gen = stream(10, "test")
    x = gen.standard_normal((5000, 3))
    assert L.max_pairwise_correlation(x) < 4 / math.sqrt(5000) * 1.5
    y = np.column_stack([x[:, 0], x[:, 0]])
    assert L.max_pairwise_correlation(y) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        L.max_pairwise_correlation(x[:, :1])


# -- headline separation -------------------------------------------------------------------


def _coboundary_pair(rep):
    model = F.ModelSpec(F.RotationCoboundary())
    reg = R.RegionFamily("interval").region(10_000)
    real = F.generate(model, F.LatticeWindow.interval(1, 10_000), SeedRecord(11, FIELD, (rep,)))
    tau = E.draw_tau(reg, 100, seed=SeedRecord(11, TAU, (rep,)))
    return [E.normalized_sum(real, tau)[0, 0], E.classical_sum(real, reg)]


def test_coboundary_separation():
    s = L.replicate(_coboundary_pair, 1000).values
    _, p_rand = L.ks_against(s[:, 0])
    _, p_class = L.ks_against(s[:, 1])
    assert p_rand > 0.01
    assert p_class < 1e-6
