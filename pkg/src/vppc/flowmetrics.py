"""Quantitative comparison of trajectory flows over a shared seed set.

All measures are taken with respect to the uncut initial weights carried by
the records (mu_weights), regardless of which cutoff drove each run: the
reference measure stays fixed while the dynamics varies.  The phase-space
test ball B_r is centered at the initial charge state (xi0, eta0), where the
initial data concentrates; trajectory suprema ("for almost all s") are taken
over the stored sample times inside the configured window.  Seeds that hit
the closest-approach floor count as escaping every sublevel; their weight is
reported separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricParams",
    "SublevelReport",
    "in_ball",
    "sublevel_flags",
    "sublevel_report",
    "superlevel_measure",
    "loglog_moment",
    "beta",
    "beta_prime",
    "phi_functional",
    "convergence_in_measure",
    "chebyshev_consistency",
    "compressibility_estimate",
    "default_boxes",
]


@dataclass(frozen=True)
class MetricParams:
    """Parameters of the flow-stability functionals.

    delta1 scales position discrepancies, delta2 velocity ones; the proof
    machinery needs delta1 <= delta2.  The window [t_start, t_end] selects
    which stored times enter trajectory suprema (t_end None means the whole
    record).
    """

    r: float = 5.0
    lam: float = 20.0
    gamma_thr: float = 0.1
    delta1: float = 0.1
    delta2: float = 0.1
    t_start: float = 0.0
    t_end: float | None = None

    def __post_init__(self):
        if min(self.r, self.lam, self.gamma_thr, self.delta1, self.delta2) <= 0.0:
            raise ValueError("all metric parameters must be positive")
        if self.delta1 > self.delta2:
            raise ValueError("need delta1 <= delta2")
        if self.t_end is not None and self.t_start > self.t_end:
            raise ValueError("need t_start <= t_end")


@dataclass(frozen=True, eq=False)
class SublevelReport:
    """Per-seed confinement flags plus the derived ball measures."""

    flags: np.ndarray
    superlevel: float
    retained: float
    floor_weight: float

    def __post_init__(self):
        if self.superlevel < 0.0 or self.retained < 0.0:
            raise ValueError("measures must be nonnegative")


def _window_slice(flow, t_start, t_end):
    t = flow.times
    hi = t[-1] if t_end is None else t_end
    mask = (t >= t_start - 1e-12) & (t <= hi + 1e-12)
    if not np.any(mask):
        raise ValueError("no stored times inside the requested window")
    return mask


def in_ball(flow, r: float) -> np.ndarray:
    """Seeds whose initial state lies in the phase-space ball B_r around (xi0, eta0)."""
    if r <= 0.0:
        raise ValueError("r must be positive")
    dx = flow.X[0] - flow.xi[0]
    dv = flow.V[0] - flow.eta[0]
    return np.einsum("ij,ij->i", dx, dx) + np.einsum("ij,ij->i", dv, dv) <= r * r


def sublevel_flags(flow, lam: float, t_start: float = 0.0, t_end: float | None = None) -> np.ndarray:
    """True where the seed's stored trajectory stays inside |(X,V)| <= lam.

    The norm is the uncentered phase-space norm; floor-hitting seeds are
    flagged False unconditionally.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    sel = _window_slice(flow, t_start, t_end)
    z2 = (
        np.einsum("kij,kij->ki", flow.X[sel], flow.X[sel])
        + np.einsum("kij,kij->ki", flow.V[sel], flow.V[sel])
    )
    ok = np.max(z2, axis=0) <= lam * lam
    return ok & ~flow.floor_hit


def sublevel_report(flow, r: float, lam: float, t_start: float = 0.0,
                    t_end: float | None = None) -> SublevelReport:
    ball = in_ball(flow, r)
    flags = sublevel_flags(flow, lam, t_start, t_end)
    w = flow.mu_weights
    return SublevelReport(
        flags=flags,
        superlevel=float(np.sum(w[ball & ~flags])),
        retained=float(np.sum(w[ball & flags])),
        floor_weight=float(np.sum(w[ball & flow.floor_hit])),
    )


def superlevel_measure(flow, r: float, lam: float, t_start: float = 0.0,
                       t_end: float | None = None) -> float:
    """Reference measure of the seeds in B_r whose trajectories escape level lam."""
    return sublevel_report(flow, r, lam, t_start, t_end).superlevel


def beta(z):
    """Doubly logarithmic growth gauge log(1 + log(1 + |z|^2 / 2))."""
    z = np.asarray(z, dtype=np.float64)
    z2 = z * z if z.ndim == 0 else np.sum(z * z, axis=-1)
    return np.log1p(np.log1p(0.5 * z2))


def beta_prime(z):
    """Gradient of beta: z / ((1 + log(1 + |z|^2/2)) (1 + |z|^2/2))."""
    z = np.asarray(z, dtype=np.float64)
    z2 = z * z if z.ndim == 0 else np.sum(z * z, axis=-1)
    g = 1.0 + 0.5 * z2
    denom = (1.0 + np.log(g)) * g
    return z / denom if z.ndim == 0 else z / denom[..., None]


def loglog_moment(flow, r: float) -> float:
    """Reference-measure integral over B_r of the per-seed sup of beta(V(s)).

    Equi-boundedness of this quantity across cutoff levels is the hook that
    makes the superlevel estimates uniform in the regularization.
    """
    ball = in_ball(flow, r)
    if not np.any(ball):
        return 0.0
    v2 = np.einsum("kij,kij->ki", flow.V[:, ball, :], flow.V[:, ball, :])
    sup_beta = np.log1p(np.log1p(0.5 * np.max(v2, axis=0)))
    return float(flow.mu_weights[ball] @ sup_beta)


def _check_comparable(flow_a, flow_b):
    if not np.array_equal(flow_a.seed_ids, flow_b.seed_ids):
        raise ValueError("flows do not share a seed set")
    if not (np.array_equal(flow_a.X[0], flow_b.X[0]) and np.array_equal(flow_a.V[0], flow_b.V[0])):
        raise ValueError("flows do not share initial seed states")


def _discrepancy_at(flow_a, flow_b, s):
    ka = flow_a.index_of_time(s)
    kb = flow_b.index_of_time(s)
    dx = flow_a.X[ka] - flow_b.X[kb]
    dv = flow_a.V[ka] - flow_b.V[kb]
    return dx, dv


def phi_functional(flow_a, flow_b, params: MetricParams, s: float) -> float:
    """Anisotropic log-distance between two flows at time s.

    Sums mu-weight times log(1 + |((X-Xbar)/delta1, (V-Vbar)/delta2)|) over
    the seeds of B_r retained by the level-lam sublevels of both flows.
    Symmetric in the flows; zero when they coincide.
    """
    _check_comparable(flow_a, flow_b)
    mask = (
        in_ball(flow_a, params.r)
        & sublevel_flags(flow_a, params.lam, params.t_start, params.t_end)
        & sublevel_flags(flow_b, params.lam, params.t_start, params.t_end)
    )
    if not np.any(mask):
        return 0.0
    dx, dv = _discrepancy_at(flow_a, flow_b, s)
    scaled = np.sqrt(
        np.einsum("ij,ij->i", dx[mask], dx[mask]) / params.delta1**2
        + np.einsum("ij,ij->i", dv[mask], dv[mask]) / params.delta2**2
    )
    return float(flow_a.mu_weights[mask] @ np.log1p(scaled))


def convergence_in_measure(flow_a, flow_b, gamma_thr: float, r: float, s: float) -> float:
    """Reference measure of B_r seeds whose states at time s differ by more than gamma_thr."""
    if gamma_thr <= 0.0 or r <= 0.0:
        raise ValueError("gamma_thr and r must be positive")
    _check_comparable(flow_a, flow_b)
    mask = in_ball(flow_a, r)
    dx, dv = _discrepancy_at(flow_a, flow_b, s)
    gap2 = np.einsum("ij,ij->i", dx, dx) + np.einsum("ij,ij->i", dv, dv)
    far = gap2 > gamma_thr * gamma_thr
    return float(np.sum(flow_a.mu_weights[mask & far]))


def chebyshev_consistency(flow_a, flow_b, params: MetricParams, s: float):
    """Both sides of the measure bound

        mu(B_r and {|Z - Zbar| > gamma}) <=
            Phi / log(1 + gamma/delta2) + mu(B_r \\ G_lam) + mu(B_r \\ Gbar_lam),

    evaluated on the same stored sample, where it holds pointwise: every far
    seed either escapes a sublevel or contributes at least
    log(1 + gamma/delta2) to Phi.  Returns (lhs, rhs).
    """
    lhs = convergence_in_measure(flow_a, flow_b, params.gamma_thr, params.r, s)
    phi = phi_functional(flow_a, flow_b, params, s)
    sup_a = superlevel_measure(flow_a, params.r, params.lam, params.t_start, params.t_end)
    sup_b = superlevel_measure(flow_b, params.r, params.lam, params.t_start, params.t_end)
    rhs = phi / math.log1p(params.gamma_thr / params.delta2) + sup_a + sup_b
    return lhs, rhs


def default_boxes(flow):
    """Fixed phase-space box family for the compressibility estimate.

    Nested product boxes (|x - xi0| <= hx componentwise, |v| <= hv) around
    the initial charge position, each generous enough to hold nearly all of
    the reference mass at every time.  Generosity matters: a box that cuts
    through the bulk of the support would register plain transport across
    its boundary as spurious measure change.
    """
    xi0 = flow.xi[0]
    zero = np.zeros(3)
    return [(xi0, zero, hx, hv)
            for hx, hv in ((7.0, 5.5), (8.0, 6.0), (9.0, 6.5), (10.0, 7.0), (12.0, 8.0))]


def compressibility_estimate(flow, boxes=None) -> dict:
    """Max/min ratio of transported to initial box measure over times and boxes.

    The transported measure of a box at time s counts the mu-weight of seeds
    currently inside it; a ratio near 1 across a spread of boxes is the
    finite-sample rendering of measure non-compression by the flow.
    """
    if boxes is None:
        boxes = default_boxes(flow)
    w = flow.mu_weights
    rows = []
    for cx, cv, hx, hv in boxes:
        inside0 = (
            np.all(np.abs(flow.X[0] - cx) <= hx, axis=1)
            & np.all(np.abs(flow.V[0] - cv) <= hv, axis=1)
        )
        m0 = float(np.sum(w[inside0]))
        if m0 <= 0.0:
            raise ValueError("a compressibility box carries no initial mass")
        worst = (1.0, 0.0)
        for k in range(flow.times.shape[0]):
            inside = (
                np.all(np.abs(flow.X[k] - cx) <= hx, axis=1)
                & np.all(np.abs(flow.V[k] - cv) <= hv, axis=1)
            )
            ratio = float(np.sum(w[inside])) / m0
            worst = (min(worst[0], ratio), max(worst[1], ratio))
        rows.append({"box": (tuple(cx), tuple(cv), hx, hv), "min_ratio": worst[0],
                     "max_ratio": max(worst[1], worst[0])})
    return {
        "min_ratio": min(r["min_ratio"] for r in rows),
        "max_ratio": max(r["max_ratio"] for r in rows),
        "boxes": rows,
    }
