"""Monte Carlo verification engine: replication, KS tests against limit laws,
Delta_n estimates, rate bounds and convergence-slope fits."""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (DimensionMismatch, InsufficientSignal, InvalidDelta, NonScalarSample,
                     RandcltError, ReplicationAborted)
from .laws import kolmogorov_sf, normal_cdf
from .rng import BOOTSTRAP, SeedRecord

ABORT_FRACTION = 0.01
MIN_REPLICATIONS = 100


# ----------------------------------------------------------------------------
# Replication
# ----------------------------------------------------------------------------


@dataclass
class ReplicationSample:
    """``N_rep`` replicated values of one statistic at one region index.

    ``values`` has shape ``(N,)`` for scalar statistics or ``(N, p)`` for
    vector ones.  ``failures`` maps error type names to counts for the
    replications that raised (and are excluded from ``values``).
    """

    experiment: str
    statistic: str
    n: int
    k: int
    values: np.ndarray
    seed: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("replicated values must be finite")
        self.values = v

    @property
    def n_rep(self) -> int:
        return self.values.shape[0]

    @property
    def scalar(self) -> bool:
        return self.values.ndim == 1

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "statistic": self.statistic, "n": self.n,
                "k": self.k, "values": self.values.tolist(), "seed": dict(self.seed),
                "failures": dict(self.failures)}


def _run_one(task: Callable, index: int):
    try:
        return index, np.asarray(task(index), dtype=float), None
    except RandcltError as exc:
        return index, None, (type(exc).__name__, str(exc))


def run_tasks(task: Callable, indices: Sequence[int], jobs: int = 1) -> list:
    """Evaluate ``task(i)`` for every index, in index order.

    With ``jobs > 1`` tasks run in worker processes; ``task`` must then be
    picklable (a module-level function or a ``functools.partial`` of one).
    Output never depends on ``jobs`` because every task derives its own
    random streams from its index.
    """
    indices = list(indices)
    if jobs <= 1 or len(indices) < 2:
        return [_run_one(task, i) for i in indices]
    chunk = max(1, len(indices) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        out = list(pool.map(_run_one, [task] * len(indices), indices, chunksize=chunk))
    out.sort(key=lambda r: r[0])
    return out


def replicate(task: Callable, n_rep: int, jobs: int = 1, experiment: str = "",
              statistic: str = "", n: int = 0, k: int = 0, master_seed: int = 0,
              min_rep: int = MIN_REPLICATIONS) -> ReplicationSample:
    """Run ``task(replicate_index)`` ``n_rep`` times and collect the values.

    Replications raising a library error are counted; more than 1% of them
    failing aborts with :class:`ReplicationAborted` carrying a summary.
    """
    if n_rep < min_rep:
        raise ValueError(f"N_rep must be at least {min_rep}")
    results = run_tasks(task, range(n_rep), jobs)
    failures = Counter(err[0] for _, _, err in results if err is not None)
    n_failed = sum(failures.values())
    if n_failed > ABORT_FRACTION * n_rep:
        first = next(err for _, _, err in results if err is not None)
        summary = ", ".join(f"{name} x{c}" for name, c in sorted(failures.items()))
        raise ReplicationAborted(
            f"{n_failed}/{n_rep} replications failed ({summary}); first: {first[1]}",
            summary=dict(failures), n_failed=n_failed, n_rep=n_rep)
    values = np.stack([v for _, v, err in results if err is None])
    return ReplicationSample(experiment, statistic, n, k, values,
                             seed={"master": master_seed, "replicates": n_rep},
                             failures=dict(failures))


# ----------------------------------------------------------------------------
# Goodness of fit
# ----------------------------------------------------------------------------


def _scalar_values(sample) -> np.ndarray:
    v = sample.values if isinstance(sample, ReplicationSample) else np.asarray(sample, dtype=float)
    if v.ndim == 2 and v.shape[1] == 1:
        v = v[:, 0]
    if v.ndim != 1:
        raise NonScalarSample("KS comparisons need scalar replication values")
    return v


def ks_distance(values, cdf: Callable) -> float:
    x = np.sort(_scalar_values(values))
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_against(sample, cdf: Callable = normal_cdf) -> tuple:
    """One-sample KS distance and asymptotic p-value ``1 - K(sqrt(N) D)``."""
    v = _scalar_values(sample)
    d = ks_distance(v, cdf)
    return d, float(kolmogorov_sf(math.sqrt(v.size) * d))


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    se: float
    n_rep: int


def delta_n_estimate(sample, cdf: Callable = normal_cdf, n_boot: int = 200,
                     seed: Optional[SeedRecord] = None) -> DeltaEstimate:
    """``Delta_n`` estimate (KS distance to ``cdf``) with a bootstrap SE."""
    v = _scalar_values(sample)
    d = ks_distance(v, cdf)
    gen = (seed or SeedRecord(0, BOOTSTRAP)).generator()
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = ks_distance(v[gen.integers(0, v.size, v.size)], cdf)
    return DeltaEstimate(d, float(boots.std(ddof=1)), v.size)


# ----------------------------------------------------------------------------
# Rate bound and slopes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RateBound:
    """The two addends of the ``Delta_n`` bound; the absolute constant is
    left out on purpose."""

    variance_term: float
    k_term: float


def rate_bound(k: int, eps: float, delta: float, moment: float, p_hat: float) -> RateBound:
    """``(P{V_n < eps}, k^{-delta/2} eps^{-(2+delta)/2} E|X|^{2+delta})``."""
    if not (0.0 < delta <= 1.0):
        raise InvalidDelta("delta must lie in (0, 1]")
    if not (eps > 0 and k >= 1):
        raise ValueError("eps must be positive and k >= 1")
    if not (np.isfinite(moment) and moment >= 0):
        raise ValueError("moment must be finite and nonnegative")
    if not (0.0 <= p_hat <= 1.0):
        raise ValueError("p_hat is a probability")
    return RateBound(float(p_hat), float(k ** (-delta / 2) * eps ** (-(2 + delta) / 2) * moment))


@dataclass(frozen=True)
class RateCurve:
    k: np.ndarray
    delta: np.ndarray
    se: np.ndarray

    @classmethod
    def from_estimates(cls, ks: Sequence[int], estimates: Sequence[DeltaEstimate]) -> "RateCurve":
        return cls(np.asarray(ks, dtype=float), np.array([e.value for e in estimates]),
                   np.array([e.se for e in estimates]))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    se: float
    intercept: float
    prediction: float
    consistent: bool

    @property
    def band(self) -> tuple:
        return self.slope - 2 * self.se, self.slope + 2 * self.se


def rate_slope(curve: RateCurve, prediction: float = -0.5, slack: float = 0.2,
               min_points: int = 4) -> SlopeFit:
    """Least-squares slope of ``log Delta`` against ``log k``.

    Standard errors propagate through ``se(log D) = se(D) / D``.  The verdict
    is ``consistent`` when ``slope <= prediction + slack``.
    """
    k, d, se = (np.asarray(a, dtype=float) for a in (curve.k, curve.delta, curve.se))
    if k.size < min_points:
        raise InsufficientSignal(f"slope fit needs at least {min_points} indices")
    if np.count_nonzero(d > 3 * se) < min_points or np.any(d <= 0):
        raise InsufficientSignal("Delta estimates sit at the Monte Carlo noise floor")
    x, y = np.log(k), np.log(d)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    slope_se = float(math.sqrt(np.sum((xc / sxx) ** 2 * (se / d) ** 2)))
    return SlopeFit(slope, slope_se, intercept, prediction, slope <= prediction + slack)


# ----------------------------------------------------------------------------
# Covariances and correlations
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceCheck:
    covariance: np.ndarray
    max_deviation: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_deviation < self.threshold


def covariance_check(samples, target) -> CovarianceCheck:
    """Replication covariance minus ``target``; threshold ``6/sqrt(N) max diag``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if target.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(f"target shape {target.shape} does not match d={x.shape[1]}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    dev = float(np.max(np.abs(cov - target)))
    thr = 6.0 / math.sqrt(x.shape[0]) * float(np.max(np.diag(target)))
    return CovarianceCheck(cov, dev, thr)


def max_pairwise_correlation(samples) -> float:
    """Largest ``|rho|`` among the columns of an ``(N, p)`` sample."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionMismatch("need at least two columns")
    r = np.corrcoef(x, rowvar=False)
    iu = np.triu_indices(x.shape[1], 1)
    return float(np.max(np.abs(r[iu])))
