"""Coulomb fields of the plasma and of the point charge.

Sign convention: fields point away from charge concentrations (repulsive
case), E(x) = sum_i w_i (x - x_i)/|x - x_i|^3 and F(x) = (x - xi)/|x - xi|^3.
Softening, when requested, applies to plasma-plasma evaluation only; the
point-charge field is always exact.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import ParticleEnsemble

__all__ = [
    "NearSingularityError",
    "plasma_field",
    "plasma_field_at_particles",
    "plasma_self_force",
    "point_charge_field",
    "gradient_kernel",
    "uniform_ball_field",
]


class NearSingularityError(Exception):
    """A field was requested too close to one of its source singularities.

    Attributes carry what is known about the offender: ``distance`` and,
    when applicable, ``index`` of the colliding target/source.
    """

    def __init__(self, message, distance=None, index=None):
        super().__init__(message)
        self.distance = distance
        self.index = index


def _check_finite(values, targets, sources, weights, what):
    bad = ~np.all(np.isfinite(values), axis=1)
    if not np.any(bad):
        return
    i = int(np.flatnonzero(bad)[0])
    live = np.flatnonzero(weights != 0.0)
    d = np.linalg.norm(sources[live] - targets[i], axis=1)
    j = int(live[np.argmin(d)])
    raise NearSingularityError(
        f"{what}: target {i} coincides with source particle {j}",
        distance=float(np.min(d)),
        index=i,
    )


def plasma_field(ensemble: ParticleEnsemble, targets, eps: float = 0.0) -> np.ndarray:
    """Plasma Coulomb field at arbitrary target points.

    Args:
        ensemble: source particles; zero-weight entries do not contribute.
        targets: (M, 3) array (or a single 3-vector) of evaluation points.
        eps: plasma softening length; 0 means the exact kernel.

    Returns:
        (M, 3) array of field vectors.

    Raises:
        NearSingularityError: eps == 0 and a target sits exactly on a
            positive-weight source.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    out = kernels.field_direct(targets, ensemble.positions, ensemble.weights, eps * eps)
    if eps == 0.0:
        _check_finite(out, targets, ensemble.positions, ensemble.weights, "plasma_field")
    return out


def plasma_field_at_particles(ensemble: ParticleEnsemble, eps: float) -> np.ndarray:
    """Field of the ensemble evaluated at its own particles, self-term excluded."""
    out = kernels.field_self(ensemble.positions, ensemble.weights, eps * eps)
    if eps == 0.0:
        _check_finite(
            out, ensemble.positions, ensemble.positions, ensemble.weights,
            "plasma_field_at_particles",
        )
    return out


def plasma_self_force(ensemble: ParticleEnsemble, eps: float) -> np.ndarray:
    """Net internal Coulomb force sum_i w_i E_(not i)(x_i).

    Zero in exact arithmetic by pairwise antisymmetry; returned so tests can
    bound the summation error.
    """
    e = plasma_field_at_particles(ensemble, eps)
    return np.einsum("i,ij->j", ensemble.weights, e)


def point_charge_field(xi, targets, exclusion_radius: float = 0.0) -> np.ndarray:
    """Exact inverse-square field of a unit point charge at xi.

    Raises NearSingularityError (carrying the offending distance) for any
    target within exclusion_radius of xi; with the default radius 0 only an
    exact collision trips it.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(3)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    d = targets - xi
    r = np.linalg.norm(d, axis=1)
    if np.any(r <= exclusion_radius):
        i = int(np.argmin(r))
        raise NearSingularityError(
            f"target {i} within exclusion radius of the point charge",
            distance=float(r[i]),
            index=i,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d / (r**3)[:, None]
    if np.any(r == 0.0):
        i = int(np.argmin(r))
        raise NearSingularityError("target coincides with the point charge", 0.0, i)
    return out


def gradient_kernel(y) -> np.ndarray:
    """Matrix kernel K(y) with entries (d_ab |y|^2 - 3 y_a y_b)/|y|^5.

    This is the distributional gradient kernel of the inverse-square field:
    symmetric, trace-free, homogeneous of degree -3.
    """
    y = np.asarray(y, dtype=np.float64).reshape(3)
    r2 = float(y @ y)
    if r2 == 0.0:
        raise NearSingularityError("gradient kernel evaluated at the origin", 0.0)
    r5 = r2 ** 2 * np.sqrt(r2)
    return (r2 * np.eye(3) - 3.0 * np.outer(y, y)) / r5


def uniform_ball_field(mass: float, radius: float, targets, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Closed-form field of a uniformly charged ball (shell theorem).

    Linear in x inside the ball, pure inverse-square outside; used as the
    analytic oracle for sampled-ball field evaluations.
    """
    center = np.asarray(center, dtype=np.float64).reshape(3)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    d = targets - center
    r = np.linalg.norm(d, axis=1)
    # clamp the inside branch to radius so the discarded lane cannot overflow
    scale = np.where(r >= radius, np.maximum(r, radius), radius) ** -3
    return mass * d * scale[:, None]
