"""Coupled integration of plasma characteristics and the point charge.

The full state (all particle positions and velocities, charge position and
velocity) is advanced by an embedded Dormand-Prince 5(4) pair with per-step
error control over every component, first-same-as-last stage reuse, and a
step cap proportional to d^(3/2) where d is the current closest approach to
the charge (the exact inverse-square charge field is the only stiff term).
The self-consistent plasma field is frozen per stage evaluation, softened by
the configured length; particle-charge coupling is exact both ways.

Zero-weight seeds are passive tracers: they feel the total field but source
nothing, so excised seeds keep well-defined trajectories comparable across
cutoff levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import diagnostics, kernels
from .core import ParticleEnsemble, PointChargeState, SimulationConfig, apply_cutoff, sample_initial_ensemble

__all__ = ["FlowRecord", "FloorAbortError", "step", "run", "run_pair", "run_ensemble", "run_pair_ensembles"]

# Dormand-Prince 5(4): 7 stages, stage 7 equals the accepted 5th-order state.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = _DP_B5 - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_DT_CAP_COEF = 1.0     # dt <= coef * d_min^(3/2)
_DT_UNDERFLOW = 1e-13  # hard failure threshold
_MAX_GROW = 5.0
_MIN_SHRINK = 0.2
_SAFETY = 0.9


class FloorAbortError(RuntimeError):
    """A particle entered the closest-approach floor around the charge.

    Carries the abort time, offending seed id, distance, and a full state
    snapshot (positions, velocities, xi, eta) for post-mortem inspection.
    """

    def __init__(self, message, time, seed_id, distance, snapshot):
        super().__init__(message)
        self.time = time
        self.seed_id = seed_id
        self.distance = distance
        self.snapshot = snapshot


@dataclass(frozen=True, eq=False)
class FlowRecord:
    """Trajectory samples of every seed and of the charge at stored times.

    weights are the (possibly cutoff) weights that drove the run;
    mu_weights are the uncut initial-density weights of the same seeds, the
    reference measure for all flow-comparison functionals.  min_seed_distance
    is each seed's closest recorded approach to the charge (sampled at
    accepted steps); floor_hit marks seeds that crossed the floor radius
    under the "flag" policy.
    """

    seed_ids: np.ndarray
    times: np.ndarray
    X: np.ndarray
    V: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    reg_index: int
    weights: np.ndarray
    mu_weights: np.ndarray
    min_seed_distance: np.ndarray
    floor_hit: np.ndarray
    stats: dict

    def __post_init__(self):
        for arr in (self.times, self.X, self.V, self.xi, self.eta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("flow record contains non-finite samples")
        if self.X.shape[0] != self.times.shape[0] or self.V.shape != self.X.shape:
            raise ValueError("inconsistent record shapes")

    @property
    def n_seeds(self) -> int:
        return self.seed_ids.shape[0]

    def index_of_time(self, s: float, tol: float = 1e-9) -> int:
        """Index of the stored time closest to s; error if none within tol."""
        k = int(np.argmin(np.abs(self.times - s)))
        if abs(float(self.times[k]) - s) > tol * max(1.0, abs(s)):
            raise ValueError(f"time {s} is not a stored sample")
        return k


def _rhs(y, weights, eps2, count, include_charge):
    """Time derivative of the flat state [X, V, xi, eta]."""
    m = 3 * count
    x = y[:m].reshape(count, 3)
    v = y[m:2 * m].reshape(count, 3)
    dy = np.empty_like(y)
    dy[:m] = y[m:2 * m]
    acc = kernels.field_self(x, weights, eps2)
    if include_charge:
        xi = y[2 * m:2 * m + 3]
        d = x - xi
        r2 = np.einsum("ij,ij->i", d, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = acc + d * (r2 ** -1.5)[:, None]
        dy[2 * m:2 * m + 3] = y[2 * m + 3:]
        dy[2 * m + 3:] = kernels.field_direct(xi, x, weights, 0.0)[0]
    else:
        dy[2 * m:] = 0.0
    dy[m:2 * m] = acc.ravel()
    return dy


def _min_charge_distance(y, count):
    m = 3 * count
    x = y[:m].reshape(count, 3)
    xi = y[2 * m:2 * m + 3]
    return np.linalg.norm(x - xi, axis=1)


def _integrate(y0, t0, sample_times, weights, eps, count, include_charge,
               atol, rtol, floor, floor_policy, seed_ids, on_sample):
    """Advance y0 from t0 through every sample time, calling on_sample at each.

    Returns integrator statistics.  sample_times must be increasing and start
    strictly after t0 (the caller emits the t0 sample itself).
    """
    eps2 = eps * eps
    y = y0.copy()
    t = t0
    stats = {"steps": 0, "rejected": 0, "rhs_evals": 0, "min_charge_distance": math.inf}
    min_dist = np.full(count, math.inf)
    floor_hit = np.zeros(count, dtype=bool)

    def note_distances(yy, tt):
        if not include_charge:
            return
        d = _min_charge_distance(yy, count)
        np.minimum(min_dist, d, out=min_dist)
        dmin = float(np.min(d)) if count else math.inf
        stats["min_charge_distance"] = min(stats["min_charge_distance"], dmin)
        if floor > 0.0 and dmin < floor:
            hit = d < floor
            if floor_policy == "abort":
                i = int(np.argmin(d))
                m = 3 * count
                raise FloorAbortError(
                    f"seed {int(seed_ids[i])} reached distance {dmin:.3e} from the charge "
                    f"(floor {floor:.3e}) at t={tt:.6f}",
                    time=tt, seed_id=int(seed_ids[i]), distance=dmin,
                    snapshot={
                        "t": tt,
                        "positions": yy[:m].reshape(count, 3).copy(),
                        "velocities": yy[m:2 * m].reshape(count, 3).copy(),
                        "xi": yy[2 * m:2 * m + 3].copy(),
                        "eta": yy[2 * m + 3:].copy(),
                    },
                )
            floor_hit[hit] = True

    note_distances(y, t)

    k_first = _rhs(y, weights, eps2, count, include_charge)
    stats["rhs_evals"] += 1

    def cap(yy):
        if not include_charge or count == 0:
            return math.inf
        d = float(np.min(_min_charge_distance(yy, count)))
        return _DT_CAP_COEF * d ** 1.5

    dt_ctrl = None
    for t_target in sample_times:
        # stop once within float residue of the boundary, then snap
        while t_target - t > 1e-12 * max(1.0, abs(t_target)):
            if dt_ctrl is None:
                dt_ctrl = min(cap(y), (t_target - t), 1e-2)
            dt = min(dt_ctrl, cap(y), t_target - t)
            if dt < _DT_UNDERFLOW:
                d = _min_charge_distance(y, count)
                i = int(np.argmin(d)) if count else -1
                m = 3 * count
                raise FloorAbortError(
                    f"step size underflow (dt={dt:.3e}) at t={t:.6f}, closest approach "
                    f"{float(d[i]) if count else math.inf:.3e}",
                    time=t, seed_id=int(seed_ids[i]) if count else -1,
                    distance=float(d[i]) if count else math.inf,
                    snapshot={
                        "t": t,
                        "positions": y[:m].reshape(count, 3).copy(),
                        "velocities": y[m:2 * m].reshape(count, 3).copy(),
                        "xi": y[2 * m:2 * m + 3].copy(),
                        "eta": y[2 * m + 3:].copy(),
                    },
                )
            ks = [k_first]
            for s in range(1, 7):
                ys = y + dt * (_DP_A[s] @ np.stack(ks[: s]))  # small s: fine
                ks.append(_rhs(ys, weights, eps2, count, include_charge))
            stats["rhs_evals"] += 6
            k_arr = np.stack(ks)
            y_new = y + dt * (_DP_B5 @ k_arr)
            err_vec = dt * (_DP_ERR @ k_arr)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
            if math.isfinite(err) and err <= 1.0:
                t = t + dt
                y = y_new
                k_first = ks[6]  # FSAL
                stats["steps"] += 1
                note_distances(y, t)
                factor = _MAX_GROW if err == 0.0 else min(
                    _MAX_GROW, max(_MIN_SHRINK, _SAFETY * err ** -0.2)
                )
                dt_ctrl = dt * factor
            else:
                stats["rejected"] += 1
                shrink = _MIN_SHRINK if not math.isfinite(err) else max(
                    _MIN_SHRINK, _SAFETY * err ** -0.2
                )
                dt_ctrl = dt * min(shrink, 0.9)
        t = t_target
        on_sample(t, y)
    stats["floor_hit"] = floor_hit
    stats["min_seed_distance"] = min_dist
    return y, stats


def _pack(ensemble, charge):
    parts = [ensemble.positions.ravel(), ensemble.velocities.ravel()]
    if charge is not None:
        parts += [charge.xi, charge.eta]
    else:
        parts += [np.zeros(3), np.zeros(3)]
    return np.concatenate(parts)


def step(particles: ParticleEnsemble, charge: PointChargeState | None, dt: float,
         eps: float, atol: float = 1e-8, rtol: float = 1e-8):
    """Advance the coupled system by an interval dt with local error control.

    Internally the interval may be covered by several accepted sub-steps when
    the error estimator rejects larger ones.  Weights and seed_ids pass
    through untouched.

    Returns the advanced (ParticleEnsemble, PointChargeState) pair (charge is
    None in and None out when the system has no point charge).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    count = len(particles)
    y0 = _pack(particles, charge)
    holder = {}

    y1, _ = _integrate(
        y0, 0.0, np.array([dt]), particles.weights, eps, count,
        include_charge=charge is not None, atol=atol, rtol=rtol,
        floor=0.0, floor_policy="flag", seed_ids=particles.seed_ids,
        on_sample=lambda t, y: holder.update(y=y.copy()),
    )
    y1 = holder["y"]
    m = 3 * count
    out = particles.with_state(y1[:m].reshape(count, 3), y1[m:2 * m].reshape(count, 3))
    new_charge = None
    if charge is not None:
        new_charge = PointChargeState(y1[2 * m:2 * m + 3], y1[2 * m + 3:])
    return out, new_charge


def run_ensemble(config: SimulationConfig, ensemble: ParticleEnsemble,
                 charge: PointChargeState | None, mu_weights=None,
                 moment_orders=(2.0, 4.0, 6.0)):
    """Integrate a prepared ensemble over [0, horizon] and collect diagnostics.

    The general entry point behind run/run_pair: the caller controls the
    cutoff state, reference weights and charge presence (charge=None runs the
    plasma alone, e.g. for free-streaming checks).
    """
    count = len(ensemble)
    mu = ensemble.weights if mu_weights is None else np.asarray(mu_weights, dtype=np.float64)
    eps = config.softening_value
    t_out = config.output_dt_value
    horizon = config.horizon
    n_samples = max(1, int(round(horizon / t_out))) if horizon > 0 else 0
    sample_times = np.linspace(0.0, horizon, n_samples + 1)[1:]

    times, xs, vs, xis, etas = [0.0], [ensemble.positions.copy()], [ensemble.velocities.copy()], [], []
    if charge is not None:
        xis.append(charge.xi.copy())
        etas.append(charge.eta.copy())
    else:
        xis.append(np.zeros(3))
        etas.append(np.zeros(3))

    diag_rows = []

    def collect(t, y):
        m = 3 * count
        x = y[:m].reshape(count, 3)
        v = y[m:2 * m].reshape(count, 3)
        xi = y[2 * m:2 * m + 3]
        eta = y[2 * m + 3:]
        if t != 0.0:
            times.append(t)
            xs.append(x.copy())
            vs.append(v.copy())
            xis.append(xi.copy())
            etas.append(eta.copy())
        diag_rows.append(
            diagnostics.snapshot_row(
                t, x, v, ensemble.weights, xi, eta, eps,
                include_charge=charge is not None, moment_orders=moment_orders,
            )
        )

    collect(0.0, _pack(ensemble, charge))
    if horizon > 0:
        _, stats = _integrate(
            _pack(ensemble, charge), 0.0, sample_times, ensemble.weights, eps, count,
            include_charge=charge is not None, atol=config.atol, rtol=config.rtol,
            floor=config.floor_value, floor_policy=config.floor_policy,
            seed_ids=ensemble.seed_ids, on_sample=collect,
        )
    else:
        stats = {
            "steps": 0, "rejected": 0, "rhs_evals": 0,
            "min_charge_distance": math.inf,
            "floor_hit": np.zeros(count, dtype=bool),
            "min_seed_distance": np.full(count, math.inf),
        }
        if charge is not None and count:
            d = np.linalg.norm(ensemble.positions - charge.xi, axis=1)
            stats["min_seed_distance"] = d
            stats["min_charge_distance"] = float(np.min(d))

    floor_hit = stats.pop("floor_hit")
    min_seed = stats.pop("min_seed_distance")
    record = FlowRecord(
        seed_ids=ensemble.seed_ids.copy(),
        times=np.array(times),
        X=np.stack(xs),
        V=np.stack(vs),
        xi=np.stack(xis),
        eta=np.stack(etas),
        reg_index=config.reg_index,
        weights=ensemble.weights.copy(),
        mu_weights=mu.copy(),
        min_seed_distance=min_seed,
        floor_hit=floor_hit,
        stats=stats,
    )
    series = diagnostics.DiagnosticSeries.from_rows(diag_rows, moment_orders=moment_orders)
    return record, series


def run(config: SimulationConfig, density) -> tuple:
    """Sample the density, apply the configured cutoff, and integrate.

    Returns (FlowRecord, DiagnosticSeries).  The record's mu_weights are the
    uncut sample weights; its weights are the cutoff weights that sourced the
    fields.  Deterministic for a fixed config.
    """
    base = sample_initial_ensemble(density, config.particles, config.seed)
    cut = apply_cutoff(base, config.reg_index)
    charge = PointChargeState(density.charge_center, density.charge_velocity)
    return run_ensemble(config, cut, charge, mu_weights=base.weights)


def run_pair_ensembles(config: SimulationConfig, base: ParticleEnsemble,
                       charge: PointChargeState | None, n_a: int, n_b: int):
    """Run the same seed set under two cutoff levels; see run_pair."""
    if n_a == n_b:
        raise ValueError("the two regularization indices must differ")
    records = []
    for n in (n_a, n_b):
        cfg_n = replace(config, reg_index=n)
        cut = apply_cutoff(base, n) if base.f0_ref is not None else base
        rec, _ = run_ensemble(cfg_n, cut, charge, mu_weights=base.weights)
        records.append(rec)
    return records[0], records[1]


def run_pair(config: SimulationConfig, density, n_a: int, n_b: int):
    """Two runs over the identical seed draw, one per cutoff level.

    Each level gets its own excision and its own default softening (both
    scale with 1/n), but the sampled coordinates and seed_ids coincide, so
    the two FlowRecords are comparable seed by seed.
    """
    base = sample_initial_ensemble(density, config.particles, config.seed)
    charge = PointChargeState(density.charge_center, density.charge_velocity)
    return run_pair_ensembles(config, base, charge, n_a, n_b)
