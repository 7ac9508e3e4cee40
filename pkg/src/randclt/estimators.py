"""Randomized statistics built from field values at i.i.d. random points.

The central objects are the set mean ``M_n`` and set variance ``V_n`` of a
realization over a region (the conditional mean and variance of ``X(tau)``
given the field), the number of random points ``k_n`` and the array of random
points itself.  The normalized sums here are the statistics whose limit law is
standard normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .errors import (
    DegenerateVariance,
    EmptyRegion,
    MissingTruth,
    TooFewPoints,
    WindowTooSmall,
)
from .fields import FieldRealization, ModelSpec, generate, marginal_truth, tuple_function
from .regions import UNIFORM, Region, RegionFamily, SamplingDensity

MODES = ("studentized_Mn", "sigma_Mn", "studentized_mu", "sigma_mu")
SCHEDULE_RULES = ("power_of_measure", "explicit", "proportional_to_measure")

# relative size below which a set variance counts as zero
VARIANCE_FLOOR = 1e-14


# ----------------------------------------------------------------------------
# k_n schedules
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KnSchedule:
    """Growth rule for the number of random points.

    ``power_of_measure``: ``k = ceil(lambda^alpha)``;
    ``proportional_to_measure``: ``k = ceil(factor * lambda)``;
    ``explicit``: ``values[i]`` for the i-th configured region index.
    """

    rule: str = "power_of_measure"
    alpha: float = 0.5
    values: tuple = ()
    factor: float = 1.0

    def __post_init__(self):
        if self.rule not in SCHEDULE_RULES:
            raise ValueError(f"unknown k_n rule {self.rule!r}; valid: {SCHEDULE_RULES}")
        if self.rule == "power_of_measure" and not 0.0 < self.alpha < 1.0:
            raise ValueError("power_of_measure needs 0 < alpha < 1")
        if self.rule == "explicit":
            vals = tuple(int(v) for v in self.values)
            if not vals or any(v < 1 for v in vals):
                raise ValueError("explicit k_n values must be positive integers")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValueError("explicit k_n values must be nondecreasing")
            object.__setattr__(self, "values", vals)
        if self.rule == "proportional_to_measure" and not self.factor > 0:
            raise ValueError("factor must be positive")

    def k(self, measure: float, position: int = 0) -> int:
        if self.rule == "power_of_measure":
            # guard against 10000**0.5 landing a hair above an integer
            return max(1, int(math.ceil(measure ** self.alpha - 1e-9)))
        if self.rule == "proportional_to_measure":
            return max(1, int(math.ceil(self.factor * measure - 1e-9)))
        return self.values[position]

    def evaluate(self, measures: Sequence[float]) -> list:
        if self.rule == "explicit" and len(self.values) != len(measures):
            raise ValueError("explicit k_n list must match the region index list")
        ks = [self.k(m, i) for i, m in enumerate(measures)]
        if any(b < a for a, b in zip(ks, ks[1:])):
            raise ValueError("k_n must be nondecreasing along the index list")
        return ks


# ----------------------------------------------------------------------------
# Random points
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TauArray:
    """Random points ``tau[l][u][i]``: grid sites used for evaluation and the
    physical points drawn (equal in lattice mode)."""

    sites: np.ndarray    # (d, w, k, m) int
    points: np.ndarray   # (d, w, k, m) float
    regions: tuple
    density: SamplingDensity
    seed: rngmod.SeedRecord
    shared: bool = False

    @property
    def d(self) -> int:
        return self.sites.shape[0]

    @property
    def w(self) -> int:
        return self.sites.shape[1]

    @property
    def k(self) -> int:
        return self.sites.shape[2]


def _per_component(regions, d: Optional[int]) -> tuple:
    if isinstance(regions, Region):
        return (regions,) * (d or 1)
    regions = tuple(regions)
    if d is not None and len(regions) != d:
        raise ValueError("need one region per component")
    return regions


def draw_tau(regions: Union[Region, Sequence[Region]], k: int, density: SamplingDensity = UNIFORM,
             w: int = 1, seed: Optional[rngmod.SeedRecord] = None, d: Optional[int] = None,
             shared: bool = False, min_points: int = 2) -> TauArray:
    """Draw ``d * w`` independent blocks of ``k`` i.i.d. points.

    Block ``(l, u)`` draws from ``seed.child(l, u)``.  With ``shared=True`` all
    components reuse the points of block ``(0, u)``.
    """
    if k < min_points:
        raise TooFewPoints(f"k_n = {k} < {min_points}")
    regs = _per_component(regions, d)
    d = len(regs)
    seed = seed or rngmod.SeedRecord(0, rngmod.TAU)
    m = regs[0].dim
    sites = np.empty((d, w, k, m), dtype=np.int64)
    points = np.empty((d, w, k, m))
    for l in range(d):
        for u in range(w):
            if shared and l > 0:
                sites[l, u], points[l, u] = sites[0, u], points[0, u]
                continue
            s, p = regs[l].sample(density, seed.child(l, u).generator(), k)
            sites[l, u], points[l, u] = s, p
    return TauArray(sites, points, regs, density, seed, shared)


# ----------------------------------------------------------------------------
# Set moments
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateBundle:
    M: np.ndarray
    V: np.ndarray
    measure: float
    k: int
    clamped: np.ndarray = field(default=None)


def _region_values(real: FieldRealization, region: Region, l: int,
                   density: SamplingDensity) -> tuple:
    sites, w = region.weights(density)
    if sites.shape[0] == 0:
        raise EmptyRegion("region has no sites")
    if not np.all(real.window.contains(sites)):
        raise WindowTooSmall("region is not inside the realization window")
    return real.at(sites, l), w


def set_moments(real: FieldRealization, region: Region, l: int = 0,
                density: SamplingDensity = UNIFORM) -> tuple:
    """``(M_n, V_n)`` of component ``l`` over ``region`` under law ``q_n``."""
    x, w = _region_values(real, region, l, density)
    return _weighted_moments(x, w)


def _weighted_moments(x: np.ndarray, w: np.ndarray) -> tuple:
    if w.size and w[0] == w.max() == w.min():
        # plain means are exact for constant fields, unlike sums of 1/n weights
        M = float(x.mean())
        return M, float(np.mean((x - M) ** 2))
    M = float(w @ x)
    V = float(w @ (x - M) ** 2)
    return M, V


def set_mean(real: FieldRealization, region: Region, l: int = 0,
             density: SamplingDensity = UNIFORM) -> float:
    return set_moments(real, region, l, density)[0]


def set_variance(real: FieldRealization, region: Region, l: int = 0,
                 density: SamplingDensity = UNIFORM) -> float:
    return set_moments(real, region, l, density)[1]


def set_variance_raw(real: FieldRealization, region: Region, l: int = 0,
                     density: SamplingDensity = UNIFORM) -> tuple:
    """``(mean of squares - M_n^2, clamped)``; negatives from rounding clamp to 0."""
    x, w = _region_values(real, region, l, density)
    if w.size and w[0] == w.max() == w.min():
        msq, M = float(np.mean(x * x)), float(x.mean())
    else:
        msq, M = float(w @ (x * x)), float(w @ x)
    V = msq - M * M
    if V < 0:
        if V < -VARIANCE_FLOOR * max(msq, 1e-300):
            raise ArithmeticError("set variance negative beyond rounding")
        return 0.0, True
    return V, False


def estimates(real: FieldRealization, regions, k: int,
              density: SamplingDensity = UNIFORM) -> EstimateBundle:
    regs = _per_component(regions, real.components)
    M = np.empty(real.components)
    V = np.empty(real.components)
    for l, reg in enumerate(regs):
        M[l], V[l] = set_moments(real, reg, l, density)
    return EstimateBundle(M, V, regs[0].measure, k, np.zeros(real.components, dtype=bool))


def _is_degenerate(V: float, M: float) -> bool:
    return V <= VARIANCE_FLOOR * max(V + M * M, 1e-300)


def lindeberg_fraction(real: FieldRealization, region: Region, k: int, eps: float, l: int = 0,
                       density: SamplingDensity = UNIFORM) -> float:
    """Truncated second set-moment ratio ``L_n`` in ``[0, 1]``."""
    x, w = _region_values(real, region, l, density)
    M, V = _weighted_moments(x, w)
    if _is_degenerate(V, M):
        raise DegenerateVariance("V_n = 0: Lindeberg fraction undefined")
    dev = x - M
    cut = eps * math.sqrt(k * V)
    tail = np.abs(dev) > cut
    return float(min(1.0, (w[tail] @ (dev[tail] ** 2)) / V))


# ----------------------------------------------------------------------------
# Normalized sums
# ----------------------------------------------------------------------------


def _truth_of(real: FieldRealization):
    if real.truth is None or real.truth.estimated:
        raise MissingTruth("this mode needs a closed-form truth oracle")
    return real.truth


def _center_scale(mode: str, M: float, V: float, real: FieldRealization, l: int) -> tuple:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; valid: {MODES}")
    if mode in ("studentized_Mn", "studentized_mu"):
        if _is_degenerate(V, M):
            raise DegenerateVariance("V_n = 0: studentized statistic is of type 0/0")
        scale = math.sqrt(V)
    else:
        sigma2 = float(_truth_of(real).variance[l])
        if sigma2 <= 0:
            raise DegenerateVariance("model variance is zero")
        scale = math.sqrt(sigma2)
    center = M if mode.endswith("Mn") else float(_truth_of(real).mean[l])
    return center, scale


def sampled_values(real: FieldRealization, tau: TauArray) -> np.ndarray:
    """``X^l(tau[l][u][i])`` with shape ``(d, w, k)``."""
    out = np.empty(tau.sites.shape[:3])
    for l in range(tau.d):
        out[l] = real.at(tau.sites[l], l)
    return out


def normalized_sum(real: FieldRealization, tau: TauArray, mode: str = "studentized_Mn",
                   density: Optional[SamplingDensity] = None) -> np.ndarray:
    """``sum_i (X^l(tau_i) - center) / (sqrt(k) scale)`` per block, shape ``(d, w)``."""
    density = density or tau.density
    if real.components != tau.d:
        raise ValueError("TauArray has a different number of components")
    x = sampled_values(real, tau)
    out = np.empty((tau.d, tau.w))
    rootk = math.sqrt(tau.k)
    for l in range(tau.d):
        M, V = set_moments(real, tau.regions[l], l, density)
        center, scale = _center_scale(mode, M, V, real, l)
        out[l] = (x[l] - center).sum(axis=-1) / (rootk * scale)
    return out


replicated_sums = normalized_sum


def classical_sum(real: FieldRealization, region: Region, l: int = 0) -> float:
    """Non-randomized ``(sum_{t in T_n} X(t) - lambda mu) / sqrt(lambda V_n)``."""
    x, w = _region_values(real, region, l, UNIFORM)
    M, V = _weighted_moments(x, w)
    if _is_degenerate(V, M):
        raise DegenerateVariance("V_n = 0")
    mu = float(_truth_of(real).mean[l])
    n = x.shape[0]
    return float((x - mu).sum() / math.sqrt(n * V))


def tuple_values(real: FieldRealization, sites: np.ndarray, offsets, f: Callable, l: int = 0) -> np.ndarray:
    """``f(X(t + t_1), ..., X(t + t_k))`` at an array of sites."""
    sites = np.asarray(sites, dtype=np.int64)
    args = []
    for o in offsets:
        shifted = sites + np.asarray(o, dtype=np.int64)
        if not np.all(real.window.contains(shifted)):
            raise WindowTooSmall("shifted sites leave the realization window")
        args.append(real.at(shifted, l))
    return np.asarray(f(*args), dtype=float)


def _tuple_moments(real, region, offsets, f, l, density) -> tuple:
    sites, w = region.weights(density)
    y = tuple_values(real, sites, offsets, f, l)
    return _weighted_moments(y, w)


def tuple_parameter_sum(real: FieldRealization, offsets, f: Union[str, Callable], theta,
                        tau: TauArray, density: Optional[SamplingDensity] = None,
                        scale: Optional[Sequence[float]] = None) -> np.ndarray:
    """``sum_i (f(X(t_1 + tau_i), ...) - theta) / (sqrt(k) sqrt(V_fn))`` per block.

    ``scale`` replaces ``sqrt(V_fn)`` per component when given.
    """
    density = density or tau.density
    fn = tuple_function(f) if isinstance(f, str) else f
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (tau.d,))
    out = np.empty((tau.d, tau.w))
    rootk = math.sqrt(tau.k)
    for l in range(tau.d):
        M, V = _tuple_moments(real, tau.regions[l], offsets, fn, l, density)
        if scale is None:
            if _is_degenerate(V, M):
                raise DegenerateVariance("V_fn = 0")
            s = math.sqrt(V)
        else:
            s = float(scale[l])
            if s <= 0:
                raise DegenerateVariance("limit variance is zero")
        y = tuple_values(real, tau.sites[l], offsets, fn, l)
        out[l] = (y - theta[l]).sum(axis=-1) / (rootk * s)
    return out


def indicator_cdf_sum(real: FieldRealization, offsets, thresholds, F: float, tau: TauArray,
                      use_limit_variance: bool = False,
                      density: Optional[SamplingDensity] = None) -> np.ndarray:
    """Randomized CLT for the indicator of ``{X(t_j + tau) <= x_j for all j}``.

    Centered at the true multivariate CDF value ``F``; scaled by the set
    standard deviation, or by ``sqrt(F - F^2)`` with ``use_limit_variance``.
    """
    fn = tuple_function("indicator_le", thresholds)
    scale = None
    if use_limit_variance:
        v = F - F * F
        if v <= 0:
            raise DegenerateVariance("F(t; x) is 0 or 1")
        scale = [math.sqrt(v)] * tau.d
    return tuple_parameter_sum(real, offsets, fn, F, tau, density, scale)


def vector_sum(real: FieldRealization, tau: TauArray, centering: str = "Mn",
               density: Optional[SamplingDensity] = None) -> np.ndarray:
    """``k^-1/2 sum_i (X^l(tau_i) - center^l)`` with one point array shared by all
    components; shape ``(d, w)``."""
    if not tau.shared and tau.d > 1:
        raise ValueError("vector sums need a shared TauArray")
    density = density or tau.density
    x = sampled_values(real, tau)
    out = np.empty((tau.d, tau.w))
    for l in range(tau.d):
        if centering == "Mn":
            center = set_mean(real, tau.regions[l], l, density)
        elif centering == "mu":
            center = float(_truth_of(real).mean[l])
        else:
            raise ValueError("centering must be 'Mn' or 'mu'")
        out[l] = (x[l] - center).sum(axis=-1) / math.sqrt(tau.k)
    return out


def vector_sum_covariance(samples: np.ndarray) -> np.ndarray:
    """Replication covariance of vector sums stacked as ``(N_rep, d)``."""
    samples = np.asarray(samples, dtype=float)
    return np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))


# ----------------------------------------------------------------------------
# Growth-condition diagnostic
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Cond17Report:
    indices: tuple
    measures: tuple
    ks: tuple
    samples: np.ndarray         # (N_rep, len(indices)) of sqrt(k_n) (M_n - mu)
    q95: np.ndarray
    slope: float                # log-log slope of q95 against lambda
    shrinking: bool


def cond17_diagnostic(model: ModelSpec, family: RegionFamily, schedule: KnSchedule,
                      indices: Sequence, n_rep: int = 200, master_seed: int = 0,
                      l: int = 0, spacing: float = 1.0, mode: str = "lattice") -> Cond17Report:
    """Monte Carlo law of ``sqrt(k_n) (M_n - mu)`` along the index list.

    One realization per replicate covers the largest region, so the index list
    is traced along a single path of the field.  The 0.95 quantile of the
    magnitude is called shrinking when its log-log slope against
    ``lambda(T_n)`` is below -0.1.
    """
    truth = marginal_truth(model)
    if truth.estimated:
        raise MissingTruth("cond17 diagnostic needs a closed-form mean")
    family.check_indices(indices)
    regions = [family.region(n, spacing, mode) for n in indices]
    measures = [r.measure for r in regions]
    ks = schedule.evaluate(measures)
    window = regions[-1].site_window()
    for r in regions:
        if not window.covers(r.site_window()):
            window = _union_window(window, r.site_window())
    mu = float(truth.mean[l])
    samples = np.empty((n_rep, len(regions)))
    for rep in range(n_rep):
        real = generate(model, window, rngmod.SeedRecord(master_seed, rngmod.FIELD, (rep,)))
        for j, (reg, k) in enumerate(zip(regions, ks)):
            samples[rep, j] = math.sqrt(k) * (set_mean(real, reg, l) - mu)
    q95 = np.quantile(np.abs(samples), 0.95, axis=0)
    if np.all(q95 == 0):
        slope = 0.0
        shrinking = False
    else:
        slope = float(np.polyfit(np.log(measures), np.log(np.maximum(q95, 1e-300)), 1)[0])
        shrinking = slope < -0.1
    return Cond17Report(tuple(indices), tuple(measures), tuple(ks), samples, q95, slope, shrinking)


def _union_window(a, b):
    from .fields import LatticeWindow

    return LatticeWindow.from_bounds(np.minimum(a.lower, b.lower), np.maximum(a.upper, b.upper), a.spacing)
