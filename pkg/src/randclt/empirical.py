"""Randomized empirical distribution functions, empirical processes and
broken-line partial-sum processes."""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateVariance, DimensionUnsupported, WindowTooSmall
from .estimators import TauArray, set_moments, tuple_values, _center_scale
from .fields import FieldRealization
from .laws import kolmogorov_cdf, kolmogorov_sf, wiener_sup_cdf  # noqa: F401  re-exported
from .regions import UNIFORM, Region

BRUTE_FORCE_LIMIT = 4_000_000
_LEAF_CELLS = 1024
_FANOUT = 8


def arctan_transform(x):
    """Map ``R`` onto ``(0, 1)`` by ``arctan(x) / pi + 1/2``."""
    return np.arctan(np.asarray(x, dtype=float)) / math.pi + 0.5


def arctan_inverse(y):
    return np.tan(math.pi * (np.asarray(y, dtype=float) - 0.5))


# ----------------------------------------------------------------------------
# EDF
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Edf:
    """``F_n^r``: average of ``r`` empirical CDFs, each over ``k`` l-vectors.

    ``samples`` has shape ``(r, k, l)``.  Averaging ``r`` EDFs with equal ``k``
    equals the EDF of the pooled sample, which is what evaluation uses.
    """

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[None, :, None]
        elif s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[1] < 1:
            raise ValueError("samples must have shape (r, k, l) with k >= 1")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def r(self) -> int:
        return self.samples.shape[0]

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    @property
    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.dim)

    @property
    def order_statistics(self) -> np.ndarray:
        if self.dim != 1:
            raise DimensionUnsupported("order statistics are defined for l = 1")
        return np.sort(self.pooled[:, 0])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            xs = np.atleast_1d(x).reshape(-1)
            out = np.searchsorted(self.order_statistics, xs, side="right") / self.pooled.shape[0]
            return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])
        pts = np.atleast_2d(x)
        pooled = self.pooled
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], 512):
            blk = pts[start:start + 512]
            le = np.all(pooled[None, :, :] <= blk[:, None, :], axis=2)
            out[start:start + 512] = le.mean(axis=1)
        return out

    def per_replicate(self, x) -> np.ndarray:
        """Each of the ``r`` individual EDFs evaluated at ``x``; shape ``(r, N)``."""
        return np.stack([Edf(self.samples[u:u + 1])(x) for u in range(self.r)])

    def trace(self) -> tuple:
        """Plot-ready ``(x, y)`` step trace for ``l = 1``."""
        xs = self.order_statistics
        ys = np.arange(1, xs.size + 1) / xs.size
        return xs, ys


def build_edf(real: FieldRealization, offsets, tau: TauArray, l: int = 0,
              replicates: Optional[Sequence[int]] = None) -> Edf:
    """EDF of ``(X(t_1 + tau_i), ..., X(t_l + tau_i))`` over the replicate
    arrays ``u`` of component ``l`` (all of them by default)."""
    us = range(tau.w) if replicates is None else replicates
    offs = [np.asarray(o, dtype=np.int64) for o in offsets]
    blocks = []
    for u in us:
        sites = tau.sites[l, u]
        cols = []
        for o in offs:
            shifted = sites + o
            if not np.all(real.window.contains(shifted)):
                raise WindowTooSmall("offset sites leave the realization window")
            cols.append(real.at(shifted, l))
        blocks.append(np.stack(cols, axis=-1))
    return Edf(np.stack(blocks))


def set_average_edf(real: FieldRealization, region: Region, offsets, l: int = 0) -> Edf:
    """``M_n(x)``: EDF of the tuples over every site of the region."""
    sites = region.grid_sites()
    cols = [tuple_values(real, sites, [o], lambda x: x, l) for o in offsets]
    return Edf(np.stack(cols, axis=-1))


# ----------------------------------------------------------------------------
# Sup distances
# ----------------------------------------------------------------------------


def _sup_1d(xs: np.ndarray, F: Callable) -> float:
    n = xs.size
    Fx = np.asarray(F(xs), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - Fx), np.max(Fx - (i - 1) / n)))


def sup_distance_bracket(edf: Edf, F: Callable, tol: float = 0.0) -> tuple:
    """Certified ``(lower, upper)`` bounds on ``sup |F_n - F|`` with
    ``upper - lower <= tol`` (``tol = 0`` gives the exact value twice).

    Only ``l = 2`` uses the tolerance; other dimensions are always exact.
    """
    if edf.dim == 2:
        return _sup_2d(edf.pooled, F, tol=tol)
    v = sup_distance(edf, F)
    return v, v


def sup_distance(edf: Edf, F: Callable) -> float:
    """``sup_x |F_n(x) - F(x)|`` for a continuous target ``F``.

    ``l = 1`` uses order statistics.  For ``l >= 2`` the supremum is taken over
    the lattice generated by the samples' coordinates (extended by ``+inf``)
    together with lower-left limits, which is exact for continuous ``F``.
    ``F`` takes an ``(N, l)`` array (``+inf`` allowed) for ``l >= 2``.
    """
    if edf.dim == 1:
        return _sup_1d(edf.order_statistics, F)
    if edf.dim == 2:
        return _sup_2d(edf.pooled, F)[0]
    return _sup_brute(edf.pooled, F)


def _ranks(values: np.ndarray) -> tuple:
    grid, rank = np.unique(values, return_inverse=True)
    return np.append(grid, np.inf), rank + 1   # 1-based; index p+1 is +inf


class _DominanceCounts:
    """``C(i, j) = #{rx <= i, ry <= j}`` on sub-grids of a block, touching only
    the points in the block's row and column strips."""

    def __init__(self, rx: np.ndarray, ry: np.ndarray):
        self.rx, self.ry = rx, ry
        ox = np.argsort(rx, kind="stable")
        oy = np.argsort(ry, kind="stable")
        self.x_sorted, self.y_of_x = rx[ox], ry[ox]
        self.y_sorted, self.x_of_y = ry[oy], rx[oy]

    def block(self, i0, i1, j0, j1, ii, jj) -> np.ndarray:
        """Counts at ``ii x jj`` with ``ii`` in ``[i0-1, i1]``, ``jj`` in ``[j0-1, j1]``."""
        lo = np.searchsorted(self.x_sorted, i0, side="left")
        hi = np.searchsorted(self.x_sorted, i1, side="right")
        sx, sy = self.x_sorted[lo:hi], self.y_of_x[lo:hi]
        lo = np.searchsorted(self.y_sorted, j0, side="left")
        hi = np.searchsorted(self.y_sorted, j1, side="right")
        cy, cx = self.y_sorted[lo:hi], self.x_of_y[lo:hi]
        base = np.count_nonzero((self.rx < i0) & (self.ry < j0))
        below = sx[sy < j0]           # sorted already
        left = cy[cx < i0]
        rows = np.searchsorted(below, ii, side="right")
        cols = np.searchsorted(left, jj, side="right")
        inside = sy <= j1
        bx = np.searchsorted(ii, sx[inside], side="left")
        by = np.searchsorted(jj, sy[inside], side="left")
        keep = (bx < ii.size) & (by < jj.size) & (sy[inside] >= j0)
        h = np.zeros((ii.size, jj.size))
        np.add.at(h, (bx[keep], by[keep]), 1.0)
        inner = h.cumsum(axis=0).cumsum(axis=1)
        return base + rows[:, None] + cols[None, :] + inner


def _sup_2d(pts: np.ndarray, F: Callable, blocks: int = 256, tol: float = 0.0) -> tuple:
    n = pts.shape[0]
    A, rx = _ranks(pts[:, 0])
    B, ry = _ranks(pts[:, 1])
    P, Q = A.size, B.size      # valid grid indices 1..P, 1..Q
    counts = _DominanceCounts(rx, ry)

    def Fgrid(ii, jj):
        xy = np.stack(np.broadcast_arrays(A[ii - 1][:, None], B[jj - 1][None, :]), axis=-1)
        return np.asarray(F(xy.reshape(-1, 2)), dtype=float).reshape(xy.shape[:2])

    def exact(i0, i1, j0, j1):
        ii = np.arange(i0 - 1, i1 + 1)
        jj = np.arange(j0 - 1, j1 + 1)
        C = counts.block(i0, i1, j0, j1, ii, jj) / n
        Fb = Fgrid(ii[1:], jj[1:])
        return float(max((C[1:, 1:] - Fb).max(), (Fb - C[:-1, :-1]).max()))

    if P * Q <= 4096:
        v = exact(1, P, 1, Q)
        return v, v

    def split(lo, hi, g):
        edges = np.unique(np.linspace(lo, hi + 1, min(g, hi - lo + 1) + 1).astype(np.int64))
        return edges[:-1], edges[1:] - 1

    lower = -np.inf

    def children(i0, i1, j0, j1, g):
        # F and the counts are monotone, so block corners bound D on each sub-block
        nonlocal lower
        a0, a1 = split(i0, i1, g)
        b0, b1 = split(j0, j1, g)
        C = counts.block(i0, i1, j0, j1, np.concatenate([a0 - 1, a1[-1:]]),
                         np.concatenate([b0 - 1, b1[-1:]])) / n
        C_before, C_end = C[:-1, :-1], C[1:, 1:]
        F_start = Fgrid(a0, b0)
        F_end = Fgrid(a1, b1)
        lower = max(lower, float((C_end - F_end).max()), float((F_start - C_before).max()))
        upper = np.maximum(C_end - F_start, F_end - C_before)
        return [(-float(upper[a, b]), int(a0[a]), int(a1[a]), int(b0[b]), int(b1[b]))
                for a in range(a0.size) for b in range(b0.size)]

    heap = children(1, P, 1, Q, blocks)
    heapq.heapify(heap)
    upper = lower
    while heap:
        neg_u, i0, i1, j0, j1 = heapq.heappop(heap)
        if -neg_u <= lower + tol:
            upper = max(lower, -neg_u)
            break
        if (i1 - i0 + 1) * (j1 - j0 + 1) <= _LEAF_CELLS:
            lower = max(lower, exact(i0, i1, j0, j1))
        else:
            for item in children(i0, i1, j0, j1, _FANOUT):
                if -item[0] > lower:
                    heapq.heappush(heap, item)
    else:
        upper = lower
    return float(lower), float(max(upper, lower))


def _sup_brute(pts: np.ndarray, F: Callable) -> float:
    n, l = pts.shape
    grids = [np.append(np.unique(pts[:, j]), np.inf) for j in range(l)]
    total = int(np.prod([g.size for g in grids]))
    if total > BRUTE_FORCE_LIMIT:
        raise DimensionUnsupported(f"grid of {total} points is too large for l = {l}")
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, l)
    Fv = np.asarray(F(mesh), dtype=float)
    closed = np.empty(mesh.shape[0])
    opened = np.empty(mesh.shape[0])
    for start in range(0, mesh.shape[0], 256):
        blk = mesh[start:start + 256]
        closed[start:start + 256] = np.all(pts[None] <= blk[:, None], axis=2).mean(axis=1)
        opened[start:start + 256] = np.all(pts[None] < blk[:, None], axis=2).mean(axis=1)
    return float(max(np.max(closed - Fv), np.max(Fv - opened)))


def ks_statistic(edf: Edf, F: Callable) -> float:
    """``sqrt(k_n) sup |F_n - F|`` for ``l = 1``."""
    if edf.dim != 1:
        raise DimensionUnsupported("ks_statistic is defined for l = 1")
    return math.sqrt(edf.k) * sup_distance(edf, F)


# ----------------------------------------------------------------------------
# Empirical processes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalProcess:
    """``x -> sqrt(k) (F_n(x) - center(x))``.

    ``center`` is a continuous CDF (process ``G_n``) or an :class:`Edf` of the
    set averages ``M_n`` (process ``L_n``).  With ``transform`` the process
    lives on ``(0, 1)^l`` through the arctan map.
    """

    edf: Edf
    center: object
    transform: bool = False

    @property
    def k(self) -> int:
        return self.edf.k

    def _center(self, x):
        if isinstance(self.center, Edf):
            return self.center(x)
        return np.asarray(self.center(x), dtype=float)

    def __call__(self, y):
        x = arctan_inverse(y) if self.transform else np.asarray(y, dtype=float)
        return math.sqrt(self.k) * (self.edf(x) - self._center(x))

    def sup_abs(self) -> float:
        """``sup |process|``, exact for ``l = 1`` and continuous-``F`` ``l = 2``."""
        rootk = math.sqrt(self.k)
        if not isinstance(self.center, Edf):
            return rootk * sup_distance(self.edf, self.center)
        if self.edf.dim != 1:
            raise DimensionUnsupported("sup of L_n implemented for l = 1")
        # two right-continuous step functions: compare at every jump point
        jumps = np.union1d(self.edf.order_statistics, self.center.order_statistics)
        diff = self.edf(jumps) - self.center(jumps)
        return rootk * float(np.max(np.abs(diff)))


def empirical_process(edf: Edf, center, transform: bool = False) -> EmpiricalProcess:
    return EmpiricalProcess(edf, center, transform)


def wf_covariance(F: Callable, x, y) -> np.ndarray:
    """``F(x ^ y) - F(x) F(y)``: covariance of the limiting Gaussian process."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.asarray(F(np.minimum(x, y))) - np.asarray(F(x)) * np.asarray(F(y))


# ----------------------------------------------------------------------------
# Broken lines
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BrokenLine:
    """Continuous piecewise-linear path through ``(j / k, ordinates[j])``."""

    ordinates: np.ndarray
    centering: str = "Mn"
    scale_mode: str = "Vn"

    def __post_init__(self):
        y = np.asarray(self.ordinates, dtype=float)
        if y.ndim != 1 or y.size < 2:
            raise ValueError("a broken line needs at least two vertices")
        if y[0] != 0.0:
            raise ValueError("broken line must start at 0")
        y.setflags(write=False)
        object.__setattr__(self, "ordinates", y)

    @property
    def k(self) -> int:
        return self.ordinates.size - 1

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.k + 1) / self.k

    def __call__(self, t):
        return np.interp(t, self.knots, self.ordinates)

    def trace(self) -> tuple:
        return self.knots, self.ordinates


def broken_line(samples, center: float, scale: float, centering: str = "Mn",
                scale_mode: str = "Vn") -> BrokenLine:
    """Vertices ``(j / k, S_j / (sqrt(k) sqrt(scale)))`` with ``S_j`` the partial
    sums of ``samples - center`` in draw order; ``scale`` is a variance."""
    x = np.asarray(samples, dtype=float)
    if not scale > 0:
        raise DegenerateVariance("broken-line scale must be positive")
    k = x.size
    S = np.concatenate([[0.0], np.cumsum(x - center)])
    return BrokenLine(S / math.sqrt(k * scale), centering, scale_mode)


_LINE_MODES = {
    "studentized_Mn": ("Mn", "Vn"),   # Z_n
    "sigma_Mn": ("Mn", "sigma"),      # Z~_n
    "sigma_mu": ("mu", "sigma"),      # Z~~_n
    "studentized_mu": ("mu", "Vn"),
}


def field_broken_line(real: FieldRealization, tau: TauArray, mode: str = "studentized_Mn",
                      l: int = 0, u: int = 0) -> BrokenLine:
    M, V = set_moments(real, tau.regions[l], l, tau.density)
    center, scale = _center_scale(mode, M, V, real, l)
    x = real.at(tau.sites[l, u], l)
    centering, scale_mode = _LINE_MODES[mode]
    return broken_line(x, center, scale * scale, centering, scale_mode)


def line_functional(line: BrokenLine, functional: str = "sup",
                    h: Optional[Callable] = None, refine: int = 16) -> float:
    """``sup``, ``sup_abs`` or ``integral`` (``int_0^1 h(t) Z(t) dt``, default
    ``h = 1``) of a broken line.

    Extrema of a piecewise-linear path sit at vertices.  The integral is the
    exact trapezoid sum for ``h = 1`` and a refined trapezoid sum otherwise.
    """
    y = line.ordinates
    if functional == "sup":
        return float(y.max())
    if functional == "sup_abs":
        return float(np.abs(y).max())
    if functional == "integral":
        if h is None:
            return float(np.sum(0.5 * (y[1:] + y[:-1])) / line.k)
        t = np.linspace(0.0, 1.0, line.k * refine + 1)
        vals = np.asarray(h(t), dtype=float) * line(t)
        return float(np.sum(0.5 * (vals[1:] + vals[:-1])) * (t[1] - t[0]))
    raise ValueError("functional must be 'sup', 'sup_abs' or 'integral'")


def write_trace(path, x, y, header=("x", "y")) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for a, b in zip(np.asarray(x), np.asarray(y)):
            wr.writerow([repr(float(a)), repr(float(b))])
