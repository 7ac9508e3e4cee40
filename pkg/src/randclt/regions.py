"""Averaging regions, their measures, lattice enumeration and samplers.

Two measurement modes exist.  In *lattice* mode the measure is counting
measure times ``h^m`` and every region is a finite set of sites.  In
*continuum* mode the region is a subset of ``R^m`` with its Lebesgue measure;
field values are read at the nearest grid site.

Cubes and intervals are half-open in lattice mode (``{0..n-1}^m`` has exactly
``n^m`` sites) and closed in continuum mode; balls and star bodies are closed
in both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from . import rng as rngmod
from .errors import ContinuumMode, EmptyRegion, RejectionBudgetExceeded
from .fields import LatticeWindow

FAMILIES = ("interval", "cube", "ball", "star")
MODES = ("lattice", "continuum")

REJECTION_PROPOSALS = 1_000_000
REJECTION_MIN_RATE = 1e-4
STAR_QUADRATURE_PROPOSALS = 1_000_000


def _radial_constant(u, rho=1.0):
    return np.full(u.shape[0], float(rho))


def _radial_ellipsoid(u, axes=(1.0,)):
    axes = np.asarray(axes, dtype=float)
    return 1.0 / np.sqrt(np.sum((u / axes) ** 2, axis=1))


_RADIAL = {
    "constant": (_radial_constant, lambda rho=1.0: float(rho)),
    "ellipsoid": (_radial_ellipsoid, lambda axes=(1.0,): float(np.max(axes))),
}


@dataclass(frozen=True)
class RegionFamily:
    """An increasing family ``{T_n}`` indexed by ``n``; size is ``scale * n``.

    ``size`` is the edge of a cube/interval, the radius of a ball and the
    homothety factor of a star body.
    """

    kind: str
    dim: int = 1
    scale: float = 1.0
    start: int = 1
    radial: str = "constant"
    radial_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown region family {self.kind!r}; valid: {FAMILIES}")
        if self.kind == "interval" and self.dim != 1:
            raise ValueError("interval family is 1-D")
        if self.dim < 1 or not self.scale > 0:
            raise ValueError("dim and scale must be positive")
        if self.kind == "star":
            if self.radial not in _RADIAL:
                raise ValueError(f"unknown radial function {self.radial!r}; valid: {sorted(_RADIAL)}")
            probe = _unit_directions(self.dim, 256)
            r = self.radial_function(probe)
            if not np.all(np.isfinite(r)) or np.any(r <= 0):
                raise ValueError("radial function must be positive and bounded")

    def size(self, n: float) -> float:
        return self.scale * float(n)

    def radial_function(self, u: np.ndarray) -> np.ndarray:
        fn = _RADIAL[self.radial][0]
        return fn(u, **self.radial_params)

    @property
    def radial_max(self) -> float:
        return _RADIAL[self.radial][1](**self.radial_params)

    def region(self, n, spacing: float = 1.0, mode: str = "lattice") -> "Region":
        return Region(self, n, spacing, mode)

    def check_indices(self, indices) -> None:
        sizes = [self.size(n) for n in indices]
        if len(sizes) == 0 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("region sizes must strictly increase along the index list")


def _unit_directions(m: int, count: int) -> np.ndarray:
    if m == 1:
        return np.array([[-1.0], [1.0]])
    g = rngmod.stream(0, rngmod.QUADRATURE, m).standard_normal((count, m))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Region:
    family: RegionFamily
    n: float
    spacing: float = 1.0
    mode: str = "lattice"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.size <= 0:
            raise EmptyRegion("region size must be positive")

    @property
    def dim(self) -> int:
        return self.family.dim

    @property
    def size(self) -> float:
        return self.family.size(self.n)

    @property
    def lattice(self) -> bool:
        return self.mode == "lattice"

    @property
    def bounding_box(self) -> tuple:
        """Closed physical box ``(lo, hi)`` containing the region."""
        m, s, f = self.dim, self.size, self.family
        if f.kind == "interval":
            return np.array([float(f.start)]), np.array([float(f.start) + s])
        if f.kind == "cube":
            return np.zeros(m), np.full(m, s)
        if f.kind == "ball":
            return np.full(m, -s), np.full(m, s)
        r = s * f.radial_max
        return np.full(m, -r), np.full(m, r)

    def contains(self, points) -> np.ndarray:
        """Membership of physical points (trailing axis = m)."""
        x = np.asarray(points, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            x = x[..., None]
        f, s = self.family, self.size
        if f.kind in ("interval", "cube"):
            lo, hi = self.bounding_box
            inside_hi = x < hi if self.lattice else x <= hi
            return np.all((x >= lo) & inside_hi, axis=-1)
        r2 = np.sum(x * x, axis=-1)
        if f.kind == "ball":
            return r2 <= s * s
        flat = x.reshape(-1, self.dim)
        norm = np.sqrt(np.sum(flat * flat, axis=1))
        out = norm == 0
        nz = ~out
        u = flat[nz] / norm[nz, None]
        out[nz] = norm[nz] <= s * f.radial_function(u)
        return out.reshape(x.shape[:-1])

    # -- lattice enumeration ------------------------------------------------

    @property
    def site_bounds(self) -> tuple:
        """Inclusive integer bounds of the sites the region can contain."""
        lo, hi = self.bounding_box
        h = self.spacing
        first = np.ceil(lo / h - 1e-12).astype(np.int64)
        if self.lattice and self.family.kind in ("interval", "cube"):
            return first, np.ceil(hi / h - 1e-12).astype(np.int64) - 1
        return first, np.floor(hi / h + 1e-12).astype(np.int64)

    def site_window(self) -> LatticeWindow:
        lo, hi = self.site_bounds
        return LatticeWindow.from_bounds(lo, hi, self.spacing)

    @cached_property
    def _sites(self) -> np.ndarray:
        lo, hi = self.site_bounds
        box = LatticeWindow.from_bounds(lo, hi, self.spacing)
        sites = box.sites()
        keep = self.contains(sites * self.spacing)
        out = np.ascontiguousarray(sites[keep])
        if out.shape[0] == 0:
            raise EmptyRegion("region contains no lattice sites")
        out.setflags(write=False)
        return out

    def lattice_points(self) -> np.ndarray:
        if not self.lattice:
            raise ContinuumMode("lattice_points is only defined in lattice mode")
        return self._sites

    def grid_sites(self) -> np.ndarray:
        """Grid sites inside the region in either mode (Riemann-sum nodes)."""
        return self._sites

    # -- measure ------------------------------------------------------------

    @cached_property
    def _measure(self) -> tuple:
        m, s, f = self.dim, self.size, self.family
        if self.lattice:
            return self._sites.shape[0] * self.spacing ** m, 0.0
        if f.kind in ("interval", "cube"):
            return s ** m, 0.0
        if f.kind == "ball":
            return math.exp(0.5 * m * math.log(math.pi) - gammaln(0.5 * m + 1.0)) * s ** m, 0.0
        lo, hi = self.bounding_box
        gen = rngmod.stream(0, rngmod.QUADRATURE, 1, m)
        x = gen.uniform(lo, hi, size=(STAR_QUADRATURE_PROPOSALS, m))
        hit = self.contains(x).astype(float)
        box = float(np.prod(hi - lo))
        p = hit.mean()
        return box * p, box * math.sqrt(p * (1 - p) / STAR_QUADRATURE_PROPOSALS)

    @property
    def measure(self) -> float:
        return self._measure[0]

    @property
    def measure_se(self) -> float:
        """Monte Carlo standard error of :attr:`measure` (0 when exact)."""
        return self._measure[1]

    # -- set averages -------------------------------------------------------

    def weights(self, density: "SamplingDensity") -> tuple:
        """Riemann-sum nodes and normalized weights of the law ``q_n``."""
        sites = self._sites
        if density.kind == "uniform":
            w = np.full(sites.shape[0], 1.0 / sites.shape[0])
        else:
            phi = density.pdf(sites * self.spacing, self)
            total = phi.sum()
            if total <= 0:
                raise EmptyRegion("density vanishes on the region")
            w = phi / total
        return sites, w

    # -- sampling -----------------------------------------------------------

    def sample(self, density: "SamplingDensity", gen: np.random.Generator, size: int) -> tuple:
        """Draw ``size`` i.i.d. points from ``q_n`` restricted to the region.

        Returns ``(sites, points)``: integer grid sites used for evaluation and
        the physical points themselves (equal to ``sites * h`` in lattice
        mode).
        """
        size = int(size)
        m = self.dim
        if self.lattice and density.kind == "uniform" and self.family.kind in ("interval", "cube"):
            lo, hi = self.site_bounds
            sites = gen.integers(lo, hi + 1, size=(size, m))
            return sites, sites * self.spacing
        lo, hi = (self.site_bounds if self.lattice else self.bounding_box)
        if density.kind != "uniform":
            slo, shi = density.support_box(self)
            if self.lattice:
                slo = np.ceil(slo / self.spacing - 1e-12).astype(np.int64)
                shi = np.floor(shi / self.spacing + 1e-12).astype(np.int64)
            lo, hi = np.maximum(lo, slo), np.minimum(hi, shi)
        envelope = density.pdf_max(self) if density.kind != "uniform" else None
        out = np.empty((size, m))
        filled = 0
        proposed = 0
        accepted = 0
        batch = max(64, 2 * size)
        while filled < size:
            if self.lattice:
                x = gen.integers(lo, hi + 1, size=(batch, m)).astype(float)
                phys = x * self.spacing
            else:
                x = gen.uniform(lo, hi, size=(batch, m))
                phys = x
            keep = self.contains(phys)
            if envelope is not None:
                u = gen.random(batch)
                keep &= u * envelope < density.pdf(phys, self)
            proposed += batch
            got = x[keep]
            accepted += got.shape[0]
            take = min(got.shape[0], size - filled)
            out[filled:filled + take] = got[:take]
            filled += take
            if proposed >= REJECTION_PROPOSALS and accepted < REJECTION_MIN_RATE * proposed:
                raise RejectionBudgetExceeded(
                    f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals"
                )
        if self.lattice:
            sites = out.astype(np.int64)
            return sites, sites * self.spacing
        sites = np.rint(out / self.spacing).astype(np.int64)
        return sites, out

    def describe(self) -> dict:
        return {"family": self.family.kind, "n": self.n, "size": self.size,
                "mode": self.mode, "spacing": self.spacing, "measure": self.measure}


# ----------------------------------------------------------------------------
# Sampling densities
# ----------------------------------------------------------------------------


def _kernel_triangular(x):
    return np.clip(1.0 - np.abs(x), 0.0, None)


def _kernel_epanechnikov(x):
    return np.clip(0.75 * (1.0 - x * x), 0.0, None)


def _kernel_box(x):
    return np.where(np.abs(x) <= 1.0, 0.5, 0.0)


# name -> (1-D kernel on [-1, 1], its maximum)
BASE_DENSITIES = {
    "triangular": (_kernel_triangular, 1.0),
    "epanechnikov": (_kernel_epanechnikov, 0.75),
    "box": (_kernel_box, 0.5),
}


@dataclass(frozen=True)
class SamplingDensity:
    """Uniform law on ``T_n`` or a rescaled density ``c^-m phi(x / c)``.

    ``phi`` is a product of 1-D kernels supported on ``[-1, 1]``.  When
    ``scale`` is ``None`` the region size is used as ``c_n``.
    """

    kind: str = "uniform"
    base: str = "triangular"
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "rescaled"):
            raise ValueError("density kind must be 'uniform' or 'rescaled'")
        if self.kind == "rescaled" and self.base not in BASE_DENSITIES:
            raise ValueError(f"unknown base density {self.base!r}; valid: {sorted(BASE_DENSITIES)}")

    def c(self, region: Region) -> float:
        return float(self.scale) if self.scale is not None else region.size

    def pdf(self, points, region: Region) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        m = x.shape[-1]
        c = self.c(region)
        kern = BASE_DENSITIES[self.base][0]
        return np.prod(kern(x / c), axis=-1) / c ** m

    def pdf_max(self, region: Region) -> float:
        return BASE_DENSITIES[self.base][1] ** region.dim / self.c(region) ** region.dim

    def support_box(self, region: Region) -> tuple:
        c = self.c(region)
        return np.full(region.dim, -c), np.full(region.dim, c)

    def normalization(self, dim: int = 1, c: float = 1.0) -> float:
        """Integral of the rescaled density over its support (quadrature)."""
        kern = BASE_DENSITIES[self.base][0]

        def integrand(*x):
            return float(np.prod([kern(np.asarray(v) / c) for v in x])) / c ** dim

        val, _ = integrate.nquad(integrand, [[-c, c]] * dim,
                                 opts={"points": [0.0], "epsabs": 1e-12, "epsrel": 1e-12})
        return val


UNIFORM = SamplingDensity()


# module-level forms of the region operations

def measure(region: Region) -> float:
    return region.measure


def contains(region: Region, t) -> bool:
    out = region.contains(t)
    return bool(out) if np.ndim(out) == 0 else out


def lattice_points(region: Region) -> np.ndarray:
    return region.lattice_points()


def sample_point(region: Region, density: SamplingDensity, gen: np.random.Generator) -> np.ndarray:
    return region.sample(density, gen, 1)[1][0]
