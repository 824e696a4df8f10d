"""Direct-summation interaction kernels with numba and numpy backends.

Everything here is geometry-free number crunching over (N, 3) position
arrays and (N,) weights; physical conventions (signs, softening policy,
singularity handling) live in :mod:`vppc.fields`.  Sources with exactly zero
weight are skipped, which both avoids 0*inf at excised particles and makes
cutoff ensembles cheaper.

The inverse-cube law is softened as (r^2 + eps2)^(-3/2).  Pass ``eps2 = 0``
for the exact kernel; callers are then responsible for checking the output
for non-finite entries (a target sitting on a positive-weight source).
"""

from __future__ import annotations

import numpy as np

from .backend import HAVE_NUMBA, get_backend

__all__ = [
    "field_direct",
    "field_self",
    "pair_potential",
    "kernel_sum",
    "cic_deposit",
]

# Block size for the numpy paths: bounds peak memory at ~block*N*3 floats.
_BLOCK = 128


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _field_direct_np(targets, sources, weights, eps2):
    live = weights != 0.0
    src = sources[live]
    w = weights[live]
    out = np.empty((targets.shape[0], 3))
    for a in range(0, targets.shape[0], _BLOCK):
        b = min(a + _BLOCK, targets.shape[0])
        dx = targets[a:b, None, :] - src[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", dx, dx) + eps2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = w * r2 ** (-1.5)
            out[a:b] = np.einsum("ijk,ij->ik", dx, inv)
    return out

def _field_self_np(pos, weights, eps2):
    n = pos.shape[0]
    out = np.empty((n, 3))
    live = weights != 0.0
    src = pos[live]
    w = weights[live]
    # map global particle index -> its column among live sources (or -1)
    colpos = np.full(n, -1, dtype=np.int64)
    colpos[live] = np.arange(src.shape[0])
    for a in range(0, n, _BLOCK):
        b = min(a + _BLOCK, n)
        dx = pos[a:b, None, :] - src[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", dx, dx) + eps2
        cp = colpos[a:b]
        has = cp >= 0
        r2[np.flatnonzero(has), cp[has]] = np.inf  # kill the self term
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = w * r2 ** (-1.5)
            out[a:b] = np.einsum("ijk,ij->ik", dx, inv)
    return out

def _pair_potential_np(pos, weights, eps2):
    live = weights != 0.0
    p = pos[live]
    w = weights[live]
    n = p.shape[0]
    total = 0.0
    for i in range(1, n):
        dx = p[:i] - p[i]
        r = np.sqrt(np.einsum("ij,ij->i", dx, dx) + eps2)
        total += w[i] * np.sum(w[:i] / r)
    return total

def _kernel_sum_np(nodes, pos, weights):
    live = weights != 0.0
    p = pos[live]
    w = weights[live]
    out = np.empty((nodes.shape[0], 3, 3))
    eye = np.eye(3)
    for a in range(0, nodes.shape[0], _BLOCK):
        b = min(a + _BLOCK, nodes.shape[0])
        dx = nodes[a:b, None, :] - p[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", dx, dx)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv5 = w * r2 ** (-2.5)
        outer = np.einsum("ijk,ijl->ijkl", dx, dx)
        term = r2[..., None, None] * eye - 3.0 * outer
        out[a:b] = np.einsum("ijkl,ij->ikl", term, inv5)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _field_direct_nb(targets, sources, weights, eps2):  # pragma: no cover
        m = targets.shape[0]
        n = sources.shape[0]
        out = np.empty((m, 3))
        for i in prange(m):
            ax = 0.0
            ay = 0.0
            az = 0.0
            tx = targets[i, 0]
            ty = targets[i, 1]
            tz = targets[i, 2]
            for j in range(n):
                wj = weights[j]
                if wj == 0.0:
                    continue
                dx = tx - sources[j, 0]
                dy = ty - sources[j, 1]
                dz = tz - sources[j, 2]
                r2 = dx * dx + dy * dy + dz * dz + eps2
                inv = wj / (r2 * np.sqrt(r2))
                ax += dx * inv
                ay += dy * inv
                az += dz * inv
            out[i, 0] = ax
            out[i, 1] = ay
            out[i, 2] = az
        return out

    @njit(cache=True, parallel=True)
    def _field_self_nb(pos, weights, eps2):  # pragma: no cover
        n = pos.shape[0]
        out = np.empty((n, 3))
        for i in prange(n):
            ax = 0.0
            ay = 0.0
            az = 0.0
            tx = pos[i, 0]
            ty = pos[i, 1]
            tz = pos[i, 2]
            for j in range(n):
                if j == i:
                    continue
                wj = weights[j]
                if wj == 0.0:
                    continue
                dx = tx - pos[j, 0]
                dy = ty - pos[j, 1]
                dz = tz - pos[j, 2]
                r2 = dx * dx + dy * dy + dz * dz + eps2
                inv = wj / (r2 * np.sqrt(r2))
                ax += dx * inv
                ay += dy * inv
                az += dz * inv
            out[i, 0] = ax
            out[i, 1] = ay
            out[i, 2] = az
        return out

    @njit(cache=True, parallel=True)
    def _pair_potential_nb(pos, weights, eps2):  # pragma: no cover
        n = pos.shape[0]
        # per-row partials summed serially afterwards, so the result does
        # not depend on how prange chunks the rows across threads
        per = np.zeros(n)
        for i in prange(n):
            wi = weights[i]
            if wi == 0.0:
                continue
            acc = 0.0
            for j in range(i):
                wj = weights[j]
                if wj == 0.0:
                    continue
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dz = pos[i, 2] - pos[j, 2]
                acc += wj / np.sqrt(dx * dx + dy * dy + dz * dz + eps2)
            per[i] = wi * acc
        total = 0.0
        for i in range(n):
            total += per[i]
        return total

    @njit(cache=True, parallel=True)
    def _kernel_sum_nb(nodes, pos, weights):  # pragma: no cover
        m = nodes.shape[0]
        n = pos.shape[0]
        out = np.zeros((m, 3, 3))
        for i in prange(m):
            for j in range(n):
                wj = weights[j]
                if wj == 0.0:
                    continue
                dx = nodes[i, 0] - pos[j, 0]
                dy = nodes[i, 1] - pos[j, 1]
                dz = nodes[i, 2] - pos[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                c = wj / (r2 * r2 * np.sqrt(r2))
                out[i, 0, 0] += c * (r2 - 3.0 * dx * dx)
                out[i, 0, 1] += c * (-3.0 * dx * dy)
                out[i, 0, 2] += c * (-3.0 * dx * dz)
                out[i, 1, 0] += c * (-3.0 * dy * dx)
                out[i, 1, 1] += c * (r2 - 3.0 * dy * dy)
                out[i, 1, 2] += c * (-3.0 * dy * dz)
                out[i, 2, 0] += c * (-3.0 * dz * dx)
                out[i, 2, 1] += c * (-3.0 * dz * dy)
                out[i, 2, 2] += c * (r2 - 3.0 * dz * dz)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as2d(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, 3)
    return a


def field_direct(targets, sources, weights, eps2=0.0):
    """Sum of w_j * (x - y_j) / (|x - y_j|^2 + eps2)^(3/2) at each target x.

    Returns an (M, 3) array.  No self-exclusion is performed; use
    :func:`field_self` when targets and sources are the same particles.
    """
    targets = _as2d(targets)
    sources = _as2d(sources)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if get_backend() == "numba":
        return _field_direct_nb(targets, sources, weights, float(eps2))
    return _field_direct_np(targets, sources, weights, float(eps2))


def field_self(pos, weights, eps2=0.0):
    """Like :func:`field_direct` with targets == sources and i != j."""
    pos = _as2d(pos)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if get_backend() == "numba":
        return _field_self_nb(pos, weights, float(eps2))
    return _field_self_np(pos, weights, float(eps2))


def pair_potential(pos, weights, eps2=0.0):
    """Sum over unordered pairs of w_i w_j / sqrt(|x_i - x_j|^2 + eps2)."""
    pos = _as2d(pos)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if get_backend() == "numba":
        return float(_pair_potential_nb(pos, weights, float(eps2)))
    return float(_pair_potential_np(pos, weights, float(eps2)))


def kernel_sum(nodes, pos, weights):
    """Sum of w_j K(x - y_j) at each node, K_ab(y) = (d_ab |y|^2 - 3 y_a y_b)/|y|^5.

    Unsoftened on purpose: callers must keep nodes away from the particles.
    Returns an (M, 3, 3) array of matrices.
    """
    nodes = _as2d(nodes)
    pos = _as2d(pos)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if get_backend() == "numba":
        return _kernel_sum_nb(nodes, pos, weights)
    return _kernel_sum_np(nodes, pos, weights)


def cic_deposit(pos, weights, origin, spacing, shape):
    """Cloud-in-cell deposit of weighted particles onto a regular grid.

    Each particle's weight is split trilinearly over the 8 surrounding
    nodes.  Mass falling outside the grid is dropped (and returned so the
    caller can decide whether that matters).

    Returns (values, lost_mass) where values has the given shape and the
    node at index (i, j, k) sits at origin + spacing * (i, j, k).
    """
    pos = _as2d(pos)
    weights = np.asarray(weights, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    shape = tuple(int(s) for s in shape)

    u = (pos - origin) / spacing
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0

    values = np.zeros(shape)
    lost = 0.0
    nmax = np.array(shape, dtype=np.int64)
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = i0 + off
        wgt = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1) * weights
        ok = np.all((idx >= 0) & (idx < nmax), axis=1)
        np.add.at(values, (idx[ok, 0], idx[ok, 1], idx[ok, 2]), wgt[ok])
        lost += float(np.sum(wgt[~ok]))
    return values, lost
