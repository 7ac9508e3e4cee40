"""Stationary random fields on the integer lattice.

A field model is described by a :class:`ModelSpec`; :func:`generate` turns a
model, a :class:`LatticeWindow` and a seed into an immutable
:class:`FieldRealization`.  Every built-in model also exposes closed-form
marginal parameters through :func:`marginal_truth`, which the verification
layer uses as an oracle.

Site coordinates are integer vectors.  A window with ``spacing != 1`` is a grid
discretization of a continuum field: the physical position of site ``t`` is
``spacing * t``, while all models are parametrized in grid units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import InvalidModel, OutOfWindow, UnknownTruth, WindowTooSmall
from .laws import bivariate_normal_cdf, multivariate_normal_cdf


# ----------------------------------------------------------------------------
# Windows
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeWindow:
    """Axis-aligned box of lattice sites ``origin + [0, extent)``."""

    origin: tuple
    extent: tuple
    spacing: float = 1.0

    def __post_init__(self):
        origin = tuple(int(v) for v in np.atleast_1d(self.origin))
        extent = tuple(int(v) for v in np.atleast_1d(self.extent))
        if len(origin) != len(extent) or not origin:
            raise ValueError("origin and extent must be non-empty and of equal length")
        if any(e <= 0 for e in extent):
            raise ValueError("window extent must be positive along every axis")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def interval(cls, start: int, n: int, spacing: float = 1.0) -> "LatticeWindow":
        return cls((start,), (n,), spacing)

    @classmethod
    def from_bounds(cls, lower, upper, spacing: float = 1.0) -> "LatticeWindow":
        """Window covering the inclusive integer box ``[lower, upper]``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=np.int64))
        upper = np.atleast_1d(np.asarray(upper, dtype=np.int64))
        return cls(tuple(lower), tuple(upper - lower + 1), spacing)

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def shape(self) -> tuple:
        return self.extent

    @property
    def size(self) -> int:
        return int(np.prod(self.extent))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.int64)

    @property
    def upper(self) -> np.ndarray:
        """Inclusive upper corner."""
        return self.lower + np.asarray(self.extent, dtype=np.int64) - 1

    @property
    def lattice_native(self) -> bool:
        return self.spacing == 1.0

    def contains(self, sites) -> np.ndarray:
        sites = self._as_sites(sites)
        return np.all((sites >= self.lower) & (sites <= self.upper), axis=-1)

    def flat_index(self, sites) -> np.ndarray:
        """Row-major position of each site inside the window."""
        sites = self._as_sites(sites)
        if not np.all(self.contains(sites)):
            raise OutOfWindow(f"site outside window {self.origin}+{self.extent}")
        rel = sites - self.lower
        return np.ravel_multi_index(tuple(np.moveaxis(rel, -1, 0)), self.extent)

    def sites(self) -> np.ndarray:
        """All sites, lexicographic (row-major) order, shape ``(size, m)``."""
        axes = [np.arange(o, o + e) for o, e in zip(self.origin, self.extent)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def padded(self, below, above) -> "LatticeWindow":
        below = np.broadcast_to(np.asarray(below, dtype=np.int64), (self.dim,))
        above = np.broadcast_to(np.asarray(above, dtype=np.int64), (self.dim,))
        return LatticeWindow.from_bounds(self.lower - below, self.upper + above, self.spacing)

    def covers(self, other: "LatticeWindow") -> bool:
        return bool(np.all(other.lower >= self.lower) and np.all(other.upper <= self.upper))

    def _as_sites(self, sites) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64)
        if sites.ndim == 0 or sites.shape[-1] != self.dim:
            if self.dim == 1:
                sites = sites[..., None]
            else:
                raise ValueError(f"sites must have trailing dimension {self.dim}")
        return sites

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "extent": list(self.extent), "spacing": self.spacing}


# ----------------------------------------------------------------------------
# Marginal distributions for i.i.d. fields
# ----------------------------------------------------------------------------

_MARGINAL_PARAMS = {
    "constant": ("c",),
    "normal": ("loc", "scale"),
    "uniform": ("low", "high"),
    "exponential": ("scale",),
    "bernoulli": ("p",),
}


def _frozen_marginal(name: str, params: dict):
    if name == "normal":
        return stats.norm(params.get("loc", 0.0), params.get("scale", 1.0))
    if name == "uniform":
        low, high = params.get("low", 0.0), params.get("high", 1.0)
        return stats.uniform(low, high - low)
    if name == "exponential":
        return stats.expon(scale=params.get("scale", 1.0))
    if name == "bernoulli":
        return stats.bernoulli(params["p"])
    raise InvalidModel(f"unknown marginal {name!r}; valid: {sorted(_MARGINAL_PARAMS)}")


# ----------------------------------------------------------------------------
# Model variants
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class IidMarginal:
    distribution: str = "normal"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.distribution not in _MARGINAL_PARAMS:
            raise InvalidModel(
                f"unknown marginal {self.distribution!r}; valid: {sorted(_MARGINAL_PARAMS)}"
            )
        unknown = set(self.params) - set(_MARGINAL_PARAMS[self.distribution])
        if unknown:
            raise InvalidModel(f"unknown parameters {sorted(unknown)} for {self.distribution}")
        if self.distribution == "constant" and "c" not in self.params:
            raise InvalidModel("constant marginal needs parameter 'c'")
        if self.distribution == "bernoulli":
            p = self.params.get("p")
            if p is None or not 0.0 <= p <= 1.0:
                raise InvalidModel("bernoulli marginal needs 0 <= p <= 1")
        if self.distribution == "normal" and self.params.get("scale", 1.0) < 0:
            raise InvalidModel("normal scale must be non-negative")
        if self.distribution == "uniform" and not (
            self.params.get("low", 0.0) < self.params.get("high", 1.0)
        ):
            raise InvalidModel("uniform marginal needs low < high")


@dataclass(frozen=True)
class GaussianMA:
    """``X(t) = mean + sum_s w_s xi(t - s)`` with i.i.d. standard normal noise.

    ``kernel`` maps integer offsets (ints in 1-D, tuples otherwise) to weights.
    """

    kernel: dict = field(default_factory=lambda: {0: 1.0})
    mean: float = 0.0

    def __post_init__(self):
        if not self.kernel:
            raise InvalidModel("GaussianMA kernel is empty")
        items = []
        dims = set()
        for off, w in self.kernel.items():
            off = tuple(int(v) for v in np.atleast_1d(off))
            dims.add(len(off))
            if not np.isfinite(w):
                raise InvalidModel("kernel weights must be finite")
            items.append((off, float(w)))
        if len(dims) != 1:
            raise InvalidModel("kernel offsets must share one dimension")
        if sum(w * w for _, w in items) == 0.0:
            raise InvalidModel("kernel has zero energy")
        object.__setattr__(self, "kernel", dict(sorted(items)))

    @property
    def dim(self) -> int:
        return len(next(iter(self.kernel)))

    def autocovariance(self, lag) -> float:
        lag = tuple(int(v) for v in np.atleast_1d(lag))
        total = 0.0
        for off, w in self.kernel.items():
            partner = tuple(o + h for o, h in zip(off, lag))
            total += w * self.kernel.get(partner, 0.0)
        return total


@dataclass(frozen=True)
class AR1:
    rho: float
    innovation_var: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise InvalidModel("AR1 needs |rho| < 1")
        if not self.innovation_var > 0:
            raise InvalidModel("AR1 innovation variance must be positive")

    @property
    def variance(self) -> float:
        return self.innovation_var / (1.0 - self.rho ** 2)

    def autocovariance(self, lag) -> float:
        return self.variance * self.rho ** abs(int(np.atleast_1d(lag)[0]))


def _sin2pi(u):
    return np.sin(2.0 * np.pi * u)


def _sawtooth(u):
    return np.asarray(u, dtype=float)


def _indicator_half(u):
    return (np.asarray(u) < 0.5).astype(float)


# name -> (g, sup|g|, variance of the coboundary as a function of frac(alpha))
_BOUNDARY_FUNCTIONS = {
    "sin2pi": (_sin2pi, 1.0, lambda a: 1.0 - math.cos(2.0 * math.pi * a)),
    "sawtooth": (_sawtooth, 1.0, lambda a: a * (1.0 - a)),
    "indicator_half": (_indicator_half, 1.0, lambda a: 1.0 - abs(1.0 - 2.0 * a)),
}


@dataclass(frozen=True)
class RotationCoboundary:
    """``X_i = g({(i+1)alpha + U}) - g({i alpha + U})``, ``U`` uniform on [0, 1)."""

    alpha: float = math.sqrt(2.0) - 1.0
    g: str = "sin2pi"

    def __post_init__(self):
        if self.g not in _BOUNDARY_FUNCTIONS:
            raise InvalidModel(f"unknown boundary function {self.g!r}; valid: {sorted(_BOUNDARY_FUNCTIONS)}")
        frac = self.alpha % 1.0
        if frac == 0.0 or float(self.alpha).is_integer():
            raise InvalidModel("rotation angle must be irrational (non-integer at least)")

    @property
    def g_sup(self) -> float:
        return _BOUNDARY_FUNCTIONS[self.g][1]

    def boundary(self, u):
        return _BOUNDARY_FUNCTIONS[self.g][0](u)


@dataclass(frozen=True)
class FiniteMarkov:
    """Stationary finite-state chain observed through ``f(state)``."""

    P: tuple
    f: tuple

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise InvalidModel("transition matrix must be square")
        if f.shape != (P.shape[0],):
            raise InvalidModel("observation map must have one value per state")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
            raise InvalidModel("transition matrix is not row-stochastic")
        k = P.shape[0]
        if np.linalg.matrix_rank(P.T - np.eye(k), tol=1e-10) != k - 1:
            raise InvalidModel("transition matrix has no unique stationary distribution")
        object.__setattr__(self, "P", tuple(map(tuple, P.tolist())))
        object.__setattr__(self, "f", tuple(f.tolist()))

    @property
    def stationary(self) -> np.ndarray:
        P = np.asarray(self.P)
        k = P.shape[0]
        A = np.vstack([P.T - np.eye(k), np.ones(k)])
        b = np.zeros(k + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()


def _tuple_identity(*xs):
    return xs[0]


def _tuple_product(*xs):
    out = np.ones_like(xs[0], dtype=float)
    for x in xs:
        out = out * x
    return out


def _tuple_sum(*xs):
    return np.sum(np.stack(xs), axis=0)


def _tuple_square(*xs):
    return xs[0] ** 2


_TUPLE_FUNCTIONS = {
    "identity": _tuple_identity,
    "product": _tuple_product,
    "sum": _tuple_sum,
    "square": _tuple_square,
    "indicator_le": None,  # needs thresholds, built by tuple_function()
}


def tuple_function(name: str, thresholds: Optional[Sequence[float]] = None) -> Callable:
    if name == "indicator_le":
        if thresholds is None:
            raise InvalidModel("indicator_le needs thresholds")
        xs_thr = tuple(float(v) for v in thresholds)

        def indicator(*xs):
            if len(xs) != len(xs_thr):
                raise InvalidModel("threshold count must equal offset count")
            out = np.ones_like(xs[0], dtype=bool)
            for x, c in zip(xs, xs_thr):
                out &= x <= c
            return out.astype(float)

        return indicator
    try:
        fn = _TUPLE_FUNCTIONS[name]
    except KeyError:
        raise InvalidModel(f"unknown tuple function {name!r}; valid: {sorted(_TUPLE_FUNCTIONS)}") from None
    return fn


@dataclass(frozen=True)
class DerivedTuple:
    """``Y(t) = f(X(t + t_1), ..., X(t + t_k))`` applied to each base component.

    ``f`` is a registered name (serializable) or an arbitrary vectorized
    callable (opaque: its moments can only be estimated).
    """

    base: "ModelSpec"
    offsets: tuple
    f: Union[str, Callable] = "identity"
    thresholds: Optional[tuple] = None

    def __post_init__(self):
        offs = tuple(tuple(int(v) for v in np.atleast_1d(o)) for o in self.offsets)
        if not offs:
            raise InvalidModel("DerivedTuple needs at least one offset")
        if len({len(o) for o in offs}) != 1:
            raise InvalidModel("offsets must share one dimension")
        object.__setattr__(self, "offsets", offs)
        if self.thresholds is not None:
            object.__setattr__(self, "thresholds", tuple(float(v) for v in self.thresholds))
        if isinstance(self.f, str):
            tuple_function(self.f, self.thresholds)

    @property
    def function(self) -> Callable:
        if callable(self.f):
            return self.f
        return tuple_function(self.f, self.thresholds)

    @property
    def opaque(self) -> bool:
        return callable(self.f)


Variant = Union[IidMarginal, GaussianMA, AR1, RotationCoboundary, FiniteMarkov, DerivedTuple]


@dataclass(frozen=True)
class ModelSpec:
    """A field model with ``components`` outputs.

    By default components are independent copies driven by separate streams.
    ``mixing`` (a ``components x q`` matrix) is the shared-noise option: ``q``
    independent base fields are generated and each output component is the
    corresponding linear combination.  ``[[1.0], [1.0]]`` duplicates one field.
    """

    variant: Variant
    components: int = 1
    mixing: Optional[tuple] = None

    def __post_init__(self):
        if self.components < 1:
            raise InvalidModel("components must be positive")
        if self.mixing is not None:
            A = np.atleast_2d(np.asarray(self.mixing, dtype=float))
            if A.shape[0] != self.components:
                raise InvalidModel("mixing matrix needs one row per component")
            if not np.all(np.isfinite(A)):
                raise InvalidModel("mixing matrix must be finite")
            object.__setattr__(self, "mixing", tuple(map(tuple, A.tolist())))
        if isinstance(self.variant, (AR1, RotationCoboundary, FiniteMarkov)) and self.dim not in (None, 1):
            raise InvalidModel("this variant is 1-D only")

    @property
    def dim(self) -> Optional[int]:
        """Lattice dimension the model is tied to, ``None`` when any works."""
        v = self.variant
        if isinstance(v, GaussianMA):
            return v.dim
        if isinstance(v, (AR1, RotationCoboundary, FiniteMarkov)):
            return 1
        if isinstance(v, DerivedTuple):
            return len(v.offsets[0])
        return None

    @property
    def n_sources(self) -> int:
        return self.components if self.mixing is None else len(self.mixing[0])


# ----------------------------------------------------------------------------
# Realizations
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TruthOracle:
    """Known marginal parameters of a model, per component."""

    mean: np.ndarray
    variance: np.ndarray
    cdf: Optional[tuple] = None
    moment: Optional[np.ndarray] = None
    delta: float = 1.0
    covariance: Optional[np.ndarray] = None
    estimated: bool = False

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def marginal_cdf(self, l: int = 0) -> Callable:
        if self.cdf is None or self.cdf[l] is None:
            raise UnknownTruth("marginal CDF not available in closed form")
        return self.cdf[l]


@dataclass(frozen=True)
class FieldRealization:
    window: LatticeWindow
    values: np.ndarray
    model: ModelSpec
    seed: rngmod.SeedRecord
    truth: Optional[TruthOracle] = None

    def __post_init__(self):
        if self.values.shape != (self.window.size, self.model.components):
            raise ValueError("values must have shape (site count, components)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self.values.setflags(write=False)

    @property
    def components(self) -> int:
        return self.values.shape[1]

    def grid(self, l: int = 0) -> np.ndarray:
        return self.values[:, l].reshape(self.window.shape)

    def at(self, sites, l: int = 0) -> np.ndarray:
        """Values of component ``l`` at an array of sites (trailing axis = m)."""
        return self.values[self.window.flat_index(sites), l]


def evaluate(real: FieldRealization, t, l: int = 0) -> float:
    return float(real.at(np.asarray(t), l))


# ----------------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------------


def _generate_iid(v: IidMarginal, window: LatticeWindow, gen) -> np.ndarray:
    if v.distribution == "constant":
        return np.full(window.size, float(v.params["c"]))
    p = v.params
    n = window.size
    if v.distribution == "normal":
        return p.get("loc", 0.0) + p.get("scale", 1.0) * gen.standard_normal(n)
    if v.distribution == "uniform":
        return gen.uniform(p.get("low", 0.0), p.get("high", 1.0), n)
    if v.distribution == "exponential":
        return gen.exponential(p.get("scale", 1.0), n)
    if v.distribution == "bernoulli":
        return (gen.random(n) < p["p"]).astype(float)
    raise InvalidModel(v.distribution)


def _generate_ma(v: GaussianMA, window: LatticeWindow, gen) -> np.ndarray:
    if v.dim != window.dim:
        raise InvalidModel("kernel dimension differs from window dimension")
    offs = np.array(list(v.kernel), dtype=np.int64)
    lo, hi = offs.min(axis=0), offs.max(axis=0)
    # noise needed at t - s for t in window, s in support
    noise_win = LatticeWindow.from_bounds(window.lower - hi, window.upper - lo)
    noise = gen.standard_normal(noise_win.shape)
    out = np.full(window.shape, float(v.mean))
    for off, w in v.kernel.items():
        start = window.lower - np.asarray(off) - noise_win.lower
        sl = tuple(slice(s, s + e) for s, e in zip(start, window.extent))
        out += w * noise[sl]
    return out.ravel()


def _generate_ar1(v: AR1, window: LatticeWindow, gen) -> np.ndarray:
    from scipy.signal import lfilter

    if window.dim != 1:
        raise InvalidModel("AR1 is 1-D only")
    e = gen.standard_normal(window.size) * math.sqrt(v.innovation_var)
    e[0] = gen.standard_normal() * math.sqrt(v.variance)
    return v.mean + lfilter([1.0], [1.0, -v.rho], e)


def _generate_coboundary(v: RotationCoboundary, window: LatticeWindow, gen) -> np.ndarray:
    if window.dim != 1:
        raise InvalidModel("RotationCoboundary is 1-D only")
    u = gen.random()
    i = np.arange(window.origin[0], window.origin[0] + window.extent[0] + 1, dtype=np.float64)
    phase = np.mod(i * v.alpha + u, 1.0)
    gvals = v.boundary(phase)
    return gvals[1:] - gvals[:-1]


def _generate_markov(v: FiniteMarkov, window: LatticeWindow, gen) -> np.ndarray:
    if window.dim != 1:
        raise InvalidModel("FiniteMarkov is 1-D only")
    cum = np.cumsum(np.asarray(v.P), axis=1)
    cum[:, -1] = 1.0
    pi_cum = np.cumsum(v.stationary)
    pi_cum[-1] = 1.0
    u = gen.random(window.size)
    states = np.empty(window.size, dtype=np.int64)
    s = int(np.searchsorted(pi_cum, u[0], side="right"))
    states[0] = s
    for j in range(1, window.size):
        s = int(np.searchsorted(cum[s], u[j], side="right"))
        states[j] = s
    return np.asarray(v.f)[states]


def _offset_padding(offsets) -> tuple:
    offs = np.asarray(offsets, dtype=np.int64)
    return np.maximum(-offs.min(axis=0), 0), np.maximum(offs.max(axis=0), 0)


def _generate_tuple(v: DerivedTuple, window: LatticeWindow, seed: rngmod.SeedRecord) -> np.ndarray:
    if len(v.offsets[0]) != window.dim:
        raise WindowTooSmall("offset dimension differs from window dimension")
    below, above = _offset_padding(v.offsets)
    base_win = window.padded(below, above)
    base = generate(v.base, base_win, seed.child(0))
    fn = v.function
    sites = window.sites()
    out = np.empty((window.size, v.base.components))
    for l in range(v.base.components):
        args = [base.at(sites + np.asarray(o), l) for o in v.offsets]
        out[:, l] = np.asarray(fn(*args), dtype=float)
    return out


def _generate_source(variant, window: LatticeWindow, seed: rngmod.SeedRecord) -> np.ndarray:
    gen = seed.generator()
    if isinstance(variant, IidMarginal):
        return _generate_iid(variant, window, gen)
    if isinstance(variant, GaussianMA):
        return _generate_ma(variant, window, gen)
    if isinstance(variant, AR1):
        return _generate_ar1(variant, window, gen)
    if isinstance(variant, RotationCoboundary):
        return _generate_coboundary(variant, window, gen)
    if isinstance(variant, FiniteMarkov):
        return _generate_markov(variant, window, gen)
    raise InvalidModel(f"unsupported variant {type(variant).__name__}")


def generate(model: ModelSpec, window: LatticeWindow, seed: rngmod.SeedRecord,
             with_truth: bool = True) -> FieldRealization:
    """Realize ``model`` on ``window``.

    Component (or shared-noise source) ``q`` draws from ``seed.child(q)``, so
    the same ``(model, window, seed)`` always reproduces identical values.
    """
    if model.dim is not None and model.dim != window.dim:
        raise InvalidModel(f"model is {model.dim}-D but window is {window.dim}-D")
    v = model.variant
    if isinstance(v, DerivedTuple):
        if model.components != v.base.components or model.mixing is not None:
            raise InvalidModel("DerivedTuple components follow its base model")
        values = _generate_tuple(v, window, seed)
    else:
        sources = np.stack(
            [_generate_source(v, window, seed.child(q)) for q in range(model.n_sources)], axis=1
        )
        if model.mixing is None:
            values = sources
        else:
            values = sources @ np.asarray(model.mixing).T
    truth = None
    if with_truth:
        try:
            truth = marginal_truth(model, allow_estimate=False)
        except UnknownTruth:
            truth = None
    return FieldRealization(window, np.ascontiguousarray(values, dtype=float), model, seed, truth)


# ----------------------------------------------------------------------------
# Truth oracles
# ----------------------------------------------------------------------------


def _normal_abs_moment(mu: float, var: float, p: float) -> float:
    if var == 0.0:
        return abs(mu) ** p
    return float(stats.norm(mu, math.sqrt(var)).expect(lambda x: abs(x) ** p))


def _source_truth(v, delta: float):
    """(mean, variance, cdf or None, E|X|^(2+delta), gaussian?) of one source."""
    p = 2.0 + delta
    if isinstance(v, IidMarginal):
        if v.distribution == "constant":
            c = float(v.params["c"])
            return c, 0.0, (lambda x, c=c: (np.asarray(x) >= c).astype(float)), abs(c) ** p, False
        dist = _frozen_marginal(v.distribution, v.params)
        mom = float(dist.expect(lambda x: abs(x) ** p))
        return float(dist.mean()), float(dist.var()), dist.cdf, mom, v.distribution == "normal"
    if isinstance(v, GaussianMA):
        var = sum(w * w for w in v.kernel.values())
        d = stats.norm(v.mean, math.sqrt(var))
        return v.mean, var, d.cdf, _normal_abs_moment(v.mean, var, p), True
    if isinstance(v, AR1):
        d = stats.norm(v.mean, math.sqrt(v.variance))
        return v.mean, v.variance, d.cdf, _normal_abs_moment(v.mean, v.variance, p), True
    if isinstance(v, RotationCoboundary):
        var = _BOUNDARY_FUNCTIONS[v.g][2](v.alpha % 1.0)
        return 0.0, var, None, None, False
    if isinstance(v, FiniteMarkov):
        pi = v.stationary
        f = np.asarray(v.f)
        mu = float(pi @ f)
        var = float(pi @ (f - mu) ** 2)
        order = np.argsort(f)
        fs, ps = f[order], np.cumsum(pi[order])

        def cdf(x, fs=fs, ps=ps):
            idx = np.searchsorted(fs, np.asarray(x, dtype=float), side="right")
            return np.where(idx > 0, ps[np.maximum(idx - 1, 0)], 0.0)

        return mu, var, cdf, float(pi @ np.abs(f) ** p), False
    raise UnknownTruth(type(v).__name__)


def _estimated_truth(model: ModelSpec, delta: float, sites: int = 100_000) -> TruthOracle:
    dim = model.dim or 1
    side = int(math.ceil(sites ** (1.0 / dim)))
    win = LatticeWindow((0,) * dim, (side,) * dim)
    real = generate(model, win, rngmod.SeedRecord(0, rngmod.QUADRATURE), with_truth=False)
    vals = real.values
    return TruthOracle(
        mean=vals.mean(axis=0),
        variance=vals.var(axis=0),
        moment=np.mean(np.abs(vals) ** (2.0 + delta), axis=0),
        delta=delta,
        covariance=np.atleast_2d(np.cov(vals, rowvar=False)),
        estimated=True,
    )


def _tuple_truth(model: ModelSpec, delta: float) -> Optional[TruthOracle]:
    v: DerivedTuple = model.variant
    d = model.components
    if v.opaque:
        return None
    if v.f == "identity" and len(v.offsets) == 1:
        return marginal_truth(v.base)
    if v.f == "indicator_le":
        try:
            F = float(joint_cdf(v.base, v.offsets)(np.asarray([v.thresholds]))[0])
        except UnknownTruth:
            return None
        mean = np.full(d, F)
        var = np.full(d, F - F * F)
        return TruthOracle(mean, var, moment=mean.copy(), delta=delta,
                           covariance=np.diag(var) if d > 1 else np.atleast_2d(var))
    if v.f == "product" and len(v.offsets) == 2 and _centered_gaussian(v.base):
        c0 = _gaussian_autocov(v.base.variant, (0,) * len(v.offsets[0]))
        lag = tuple(a - b for a, b in zip(v.offsets[0], v.offsets[1]))
        c = _gaussian_autocov(v.base.variant, lag)
        mean = np.full(d, c)
        var = np.full(d, c0 * c0 + c * c)  # Isserlis
        return TruthOracle(mean, var, delta=delta,
                           covariance=np.diag(var) if d > 1 else np.atleast_2d(var))
    return None


def marginal_truth(model: ModelSpec, delta: float = 1.0, allow_estimate: bool = True) -> TruthOracle:
    """Closed-form marginal mean, variance, CDF and ``E|X(0)|^(2+delta)``.

    For a :class:`DerivedTuple` without closed form the moments are estimated
    by brute-force Monte Carlo over 10^5 sites and flagged ``estimated``; with
    ``allow_estimate=False`` that case raises :class:`UnknownTruth`.
    """
    v = model.variant
    if isinstance(v, DerivedTuple):
        truth = _tuple_truth(model, delta)
        if truth is not None:
            return truth
        if not allow_estimate:
            raise UnknownTruth("derived tuple field has no closed-form moments")
        return _estimated_truth(model, delta)

    mu, var, cdf, mom, gaussian = _source_truth(v, delta)
    q = model.n_sources
    A = np.eye(q) if model.mixing is None else np.asarray(model.mixing)
    mean = A @ np.full(q, mu)
    cov = var * (A @ A.T)
    variance = np.diag(cov).copy()
    cdfs = []
    moments = []
    for row in A:
        nz = np.flatnonzero(row)
        if len(nz) == 1 and row[nz[0]] == 1.0:
            cdfs.append(cdf)
            moments.append(mom)
        elif gaussian:
            m_l, v_l = float(row.sum() * mu), float(var * row @ row)
            cdfs.append(stats.norm(m_l, math.sqrt(v_l)).cdf if v_l > 0 else None)
            moments.append(_normal_abs_moment(m_l, v_l, 2.0 + delta))
        else:
            cdfs.append(None)
            moments.append(None)
    return TruthOracle(
        mean=mean,
        variance=variance,
        cdf=tuple(cdfs) if any(c is not None for c in cdfs) else None,
        moment=None if any(m is None for m in moments) else np.asarray(moments, dtype=float),
        delta=delta,
        covariance=cov,
    )


def _gaussian_autocov(v, lag) -> float:
    if isinstance(v, GaussianMA):
        return v.autocovariance(lag)
    if isinstance(v, AR1):
        return v.autocovariance(lag)
    if isinstance(v, IidMarginal) and v.distribution == "normal":
        s = v.params.get("scale", 1.0)
        return s * s if all(h == 0 for h in np.atleast_1d(lag)) else 0.0
    raise UnknownTruth("not a Gaussian model")


def _centered_gaussian(model: ModelSpec) -> bool:
    v = model.variant
    if model.mixing is not None:
        return False
    if isinstance(v, GaussianMA) or isinstance(v, AR1):
        return v.mean == 0.0
    return isinstance(v, IidMarginal) and v.distribution == "normal" and v.params.get("loc", 0.0) == 0.0



def joint_cdf(model: ModelSpec, offsets, component: int = 0) -> Callable:
    """CDF of ``(X(t_1), ..., X(t_l))`` for one component, vectorized over rows.

    Available for i.i.d. marginals and for Gaussian models.  Arguments may
    contain ``+inf``.
    """
    offs = [tuple(int(v) for v in np.atleast_1d(o)) for o in offsets]
    v = model.variant
    if model.mixing is not None:
        raise UnknownTruth("joint CDF of mixed components is not implemented")
    if isinstance(v, IidMarginal):
        truth = marginal_truth(model)
        F = truth.marginal_cdf(component)
        groups: dict = {}
        for j, o in enumerate(offs):
            groups.setdefault(o, []).append(j)

        def cdf_iid(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            out = np.ones(x.shape[0])
            for cols in groups.values():
                out *= F(np.min(x[:, cols], axis=1))
            return out

        return cdf_iid

    if isinstance(v, (GaussianMA, AR1)):
        mean = v.mean
        l = len(offs)
        C = np.array([[_gaussian_autocov(v, tuple(a - b for a, b in zip(offs[i], offs[j])))
                       for j in range(l)] for i in range(l)])
        if l == 1:
            d = stats.norm(mean, math.sqrt(C[0, 0]))
            return lambda x: d.cdf(np.atleast_2d(np.asarray(x, dtype=float))[:, 0])
        if l == 2:
            s1, s2 = math.sqrt(C[0, 0]), math.sqrt(C[1, 1])
            r = C[0, 1] / (s1 * s2)

            def cdf_bvn(x):
                x = np.atleast_2d(np.asarray(x, dtype=float))
                return bivariate_normal_cdf((x[:, 0] - mean) / s1, (x[:, 1] - mean) / s2, r)

            return cdf_bvn

        def cdf_mvn(x):
            return multivariate_normal_cdf(np.atleast_2d(np.asarray(x, dtype=float)), np.full(l, mean), C)

        return cdf_mvn
    raise UnknownTruth(f"no joint CDF for {type(v).__name__}")
