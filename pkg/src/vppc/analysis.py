"""Grid-based singular-integral and maximal-function checks.

Fields live on uniform 3D grids.  Weak pseudo-norms of discrete samples are
computed exactly from order statistics (the level grid of the definition is
refined onto the sample values); analytic superlevel-volume formulas are
accepted for the closed-form cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal
from scipy.spatial import cKDTree

from . import kernels

__all__ = [
    "GridField",
    "make_grid",
    "centered_grid",
    "grid_lp_norm",
    "weak_pseudo_norm",
    "weak_pseudo_norm_analytic",
    "point_charge_weak_norm",
    "singular_convolution",
    "smooth_maximal",
    "default_scales",
    "difference_quotient_check",
    "interpolation_m1_lp",
]


@dataclass(frozen=True, eq=False)
class GridField:
    """Values on a uniform 3D grid; node (i,j,k) sits at origin + spacing*(i,j,k).

    values may carry trailing component axes (3 for vector fields, 3x3 for
    matrix fields) or be None for a bare grid specification, in which case an
    explicit shape is required.
    """

    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray | None = None
    grid_shape: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        sp = np.broadcast_to(np.asarray(self.spacing, dtype=np.float64), (3,)).copy()
        if np.any(sp <= 0.0) or not np.all(np.isfinite(sp)):
            raise ValueError("grid spacing must be positive and finite")
        object.__setattr__(self, "spacing", sp)
        if self.values is not None:
            vals = np.asarray(self.values, dtype=np.float64)
            if vals.ndim < 3:
                raise ValueError("grid values must have three leading grid axes")
            if not np.all(np.isfinite(vals)):
                raise ValueError("grid values must be finite")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "grid_shape", vals.shape[:3])
        elif self.grid_shape is None:
            raise ValueError("either values or an explicit shape is required")
        else:
            object.__setattr__(self, "grid_shape", tuple(int(s) for s in self.grid_shape))

    @property
    def shape(self) -> tuple:
        return self.grid_shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extents(self) -> np.ndarray:
        return self.spacing * (np.array(self.shape) - 1)

    def node_coordinates(self) -> np.ndarray:
        axes = [self.origin[d] + self.spacing[d] * np.arange(self.shape[d]) for d in range(3)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interpolate(self, points) -> np.ndarray:
        """Trilinear interpolation at arbitrary points (clamped at edges)."""
        if self.values is None:
            raise ValueError("geometry-only grid has no values")
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u = ((pts - self.origin) / self.spacing).T
        vals = self.values
        comp_shape = vals.shape[3:]
        flat = vals.reshape(*vals.shape[:3], -1)
        out = np.stack(
            [ndimage.map_coordinates(flat[..., c], u, order=1, mode="nearest")
             for c in range(flat.shape[-1])],
            axis=-1,
        )
        return out.reshape(pts.shape[0], *comp_shape) if comp_shape else out[..., 0]


def make_grid(origin, spacing, shape) -> GridField:
    """Bare grid specification (no values)."""
    return GridField(origin=origin, spacing=spacing, grid_shape=tuple(shape))


def centered_grid(center, half_extent: float, nodes: int) -> GridField:
    """Cubic grid of nodes^3 points covering center +- half_extent."""
    center = np.asarray(center, dtype=np.float64).reshape(3)
    spacing = 2.0 * half_extent / (nodes - 1)
    return make_grid(center - half_extent, spacing, (nodes, nodes, nodes))


def _magnitude(values) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim > 1 and vals.shape[-1] == 3:
        return np.sqrt(np.sum(vals**2, axis=-1))
    return np.abs(vals)


def grid_lp_norm(values, p: float, cell_volume: float) -> float:
    """Quadrature L^p norm of gridded values (vector magnitudes if trailing 3-axis)."""
    mag = _magnitude(values).ravel()
    if math.isinf(p):
        return float(np.max(mag)) if mag.size else 0.0
    return float((np.sum(mag**p) * cell_volume) ** (1.0 / p))


def weak_pseudo_norm(values, p: float, cell_volume: float = 1.0) -> float:
    """sup over levels of level * measure(|values| > level)^(1/p), exactly.

    For a finite sample the supremum over all positive levels is attained in
    the limit at sample values, so sorting magnitudes descending and scanning
    k -> v_(k) * (k * cell_volume)^(1/p) evaluates it without a level grid.
    """
    if p < 1.0:
        raise ValueError("p must be >= 1")
    mag = _magnitude(values).ravel()
    mag = mag[mag > 0.0]
    if mag.size == 0:
        return 0.0
    mag = np.sort(mag)[::-1]
    k = np.arange(1, mag.size + 1, dtype=np.float64)
    return float(np.max(mag * (k * cell_volume) ** (1.0 / p)))


def weak_pseudo_norm_analytic(volume_of_level, p: float, levels) -> float:
    """Same supremum with an analytic superlevel-volume function on a level grid."""
    levels = np.asarray(levels, dtype=np.float64)
    if np.any(levels <= 0.0):
        raise ValueError("levels must be positive")
    vols = np.array([volume_of_level(l) for l in levels], dtype=np.float64)
    return float(np.max(levels * vols ** (1.0 / p)))


def point_charge_weak_norm(p: float = 1.5) -> float:
    """Weak pseudo-norm of the unit inverse-square field, (4pi/3)^(2/3) at p=3/2.

    The superlevel {|F| > l} is the ball of volume (4pi/3) l^(-3/2), making
    the product level-independent exactly at p = 3/2 and unbounded otherwise.
    """
    if p != 1.5:
        raise ValueError("the inverse-square field has a finite weak norm only at p = 3/2")
    return (4.0 * math.pi / 3.0) ** (2.0 / 3.0)


def singular_convolution(positions, weights, grid: GridField, charge_xi=None) -> GridField:
    """Matrix field sum_j w_j K(x - y_j) on the grid, K the gradient kernel.

    Atomic sources need no principal value off the atoms, so this is an exact
    pairwise sum; an optional unit atom at charge_xi joins the sources.  Nodes
    must keep at least one cell spacing from every source.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    if charge_xi is not None:
        pos = np.vstack([pos, np.asarray(charge_xi, dtype=np.float64).reshape(1, 3)])
        w = np.append(w, 1.0)
    nodes = grid.node_coordinates().reshape(-1, 3)
    live = pos[w != 0.0]
    if live.shape[0]:
        d, _ = cKDTree(live).query(nodes, k=1)
        gap = float(np.min(d))
        if gap < float(np.min(grid.spacing)):
            raise ValueError(
                f"node-atom collision: nearest source at {gap:.3e}, "
                f"need at least one cell ({float(np.min(grid.spacing)):.3e})"
            )
    out = kernels.kernel_sum(nodes, pos, w).reshape(*grid.shape, 3, 3)
    return GridField(origin=grid.origin, spacing=grid.spacing, values=out)


def default_scales(grid: GridField) -> list:
    """Dyadic averaging radii from 2x spacing up to a quarter of the extent."""
    r = 2.0 * float(np.max(grid.spacing))
    top = float(np.min(grid.extents)) / 4.0
    scales = []
    while r <= top:
        scales.append(r)
        r *= 2.0
    return scales


def _bump_kernel(radius: float, spacing) -> np.ndarray:
    half = np.floor(radius / spacing).astype(int)
    axes = [np.arange(-h, h + 1) * s for h, s in zip(half, spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r2 = sum(m**2 for m in mesh) / radius**2
    kern = np.where(r2 < 1.0, (1.0 - r2) ** 2, 0.0)
    total = kern.sum()
    if total == 0.0:
        raise ValueError("averaging radius below grid resolution")
    return kern / total


def smooth_maximal(field: GridField, scales=None) -> GridField:
    """Maximal smooth-bump average of |field| over the dyadic scale set.

    The bump is the radial polynomial (1 - |x/R|^2)^2 restricted to the
    lattice and normalized to unit mass at each scale; averages use
    zero-padded FFT convolution, so nodes within R of the boundary are biased
    low (interior nodes are exact quadrature averages).
    """
    if field.values is None:
        raise ValueError("smooth_maximal needs field values")
    if scales is None:
        scales = default_scales(field)
    if len(scales) < 3:
        raise ValueError("need at least three dyadic scales inside the grid")
    top = float(np.min(field.extents))
    if max(scales) > top:
        raise ValueError("averaging scale exceeds the grid extent")
    mag = _magnitude(field.values)
    out = np.full(mag.shape, -np.inf)
    for r in scales:
        kern = _bump_kernel(float(r), field.spacing)
        avg = signal.fftconvolve(mag, kern, mode="same")
        np.maximum(out, avg, out=out)
    out = np.maximum(out, 0.0)  # fft rounding can leave tiny negatives
    return GridField(origin=field.origin, spacing=field.spacing, values=out)


def difference_quotient_check(points_a, points_b, values_a, values_b,
                              maximal: GridField) -> dict:
    """Ratios |b2(x) - b2(y)| / |x - y| against U(x) + U(y) over point pairs.

    U is the smooth maximal field; the bound carries an implicit constant, so
    the report exposes the max and mean ratio for stability comparisons
    rather than asserting ratio <= 1.
    """
    a = np.atleast_2d(np.asarray(points_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(points_b, dtype=np.float64))
    va = np.atleast_2d(np.asarray(values_a, dtype=np.float64))
    vb = np.atleast_2d(np.asarray(values_b, dtype=np.float64))
    dist = np.linalg.norm(a - b, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("zero-distance pair")
    quot = np.linalg.norm(va - vb, axis=1) / dist
    denom = maximal.interpolate(a) + maximal.interpolate(b)
    ratios = quot / denom
    return {
        "max_ratio": float(np.max(ratios)),
        "mean_ratio": float(np.mean(ratios)),
        "count": int(dist.size),
    }


def interpolation_m1_lp(values, p: float, cell_volume: float) -> float:
    """Ratio of the L1 norm to its weak-M1/L^p interpolation bound.

    The bound (without absolute constant) is M1 * (1 + log+(Lp / M1)).
    Identically zero samples return 0 by convention.
    """
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    mag = _magnitude(values)
    if not np.any(mag > 0.0):
        return 0.0
    l1 = float(np.sum(mag) * cell_volume)
    lp = grid_lp_norm(mag, p, cell_volume)
    m1 = weak_pseudo_norm(mag, 1.0, cell_volume)
    rhs = m1 * (1.0 + max(0.0, math.log(lp / m1)))
    return l1 / rhs
