"""Conserved quantities, moments, virial accumulation and norm estimates.

Everything here is a pure function of a state snapshot or of stored series;
nothing mutates ensembles.  Energy uses the softening-consistent pair
potential 1/sqrt(r^2+eps^2) for plasma pairs (so conservation tests probe the
integrator, not a potential/force mismatch) and the exact 1/r potential
against the point charge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _sciint

from . import analysis, kernels
from .core import ParticleEnsemble, PointChargeState
from .fields import NearSingularityError

__all__ = [
    "DiagnosticSeries",
    "total_mass",
    "total_energy",
    "energy_moment",
    "virial_rate",
    "virial_accumulate",
    "density_field",
    "density_norm",
    "field_norm",
    "holder_seminorm",
    "interpolation_constant",
    "interpolation_check",
    "fit_power_bound",
    "charge_bound_report",
    "compute_norm_series",
]


def total_mass(ensemble: ParticleEnsemble) -> float:
    """Exactly-rounded sum of the weights."""
    return math.fsum(ensemble.weights)


def _charge_distances(positions, weights, xi, what):
    r = np.linalg.norm(positions - np.asarray(xi, dtype=np.float64).reshape(3), axis=1)
    if np.any((r == 0.0) & (weights > 0.0)):
        i = int(np.flatnonzero((r == 0.0) & (weights > 0.0))[0])
        raise NearSingularityError(f"{what}: particle {i} sits on the charge", 0.0, i)
    return r


def total_energy(ensemble: ParticleEnsemble, charge: PointChargeState | None, eps: float):
    """Total energy and its four nonnegative components.

    Returns (total, components) with components keyed kinetic_plasma,
    kinetic_charge, potential_pp, potential_pc.
    """
    w = ensemble.weights
    v2 = np.einsum("ij,ij->i", ensemble.velocities, ensemble.velocities)
    kin_plasma = 0.5 * float(w @ v2)
    pot_pp = kernels.pair_potential(ensemble.positions, w, eps * eps)
    kin_charge = 0.0
    pot_pc = 0.0
    if charge is not None:
        kin_charge = 0.5 * float(charge.eta @ charge.eta)
        r = _charge_distances(ensemble.positions, w, charge.xi, "total_energy")
        live = w > 0.0
        pot_pc = float(np.sum(w[live] / r[live]))
    comps = {
        "kinetic_plasma": kin_plasma,
        "kinetic_charge": kin_charge,
        "potential_pp": pot_pp,
        "potential_pc": pot_pc,
    }
    return kin_plasma + kin_charge + pot_pp + pot_pc, comps


def energy_moment(ensemble: ParticleEnsemble, xi, m: float) -> float:
    """Weighted moment sum_i w_i (|v_i|^2 + 1/|x_i - xi|)^(m/2).

    With xi None the near-charge weight is dropped and this is the plain
    velocity moment.
    """
    if m < 0:
        raise ValueError("moment order must be >= 0")
    w = ensemble.weights
    v2 = np.einsum("ij,ij->i", ensemble.velocities, ensemble.velocities)
    if xi is None:
        base = v2
    else:
        r = _charge_distances(ensemble.positions, w, xi, "energy_moment")
        with np.errstate(divide="ignore"):
            base = v2 + np.where(r > 0.0, 1.0 / r, np.inf)
        base = np.where(w > 0.0, base, 0.0)
    return float(w @ base ** (m / 2.0))


def virial_rate(ensemble: ParticleEnsemble, xi) -> float:
    """Instantaneous proximity functional sum_i w_i / |x_i - xi|^2."""
    w = ensemble.weights
    r = _charge_distances(ensemble.positions, w, xi, "virial_rate")
    live = w > 0.0
    return float(np.sum(w[live] / r[live] ** 2))


def virial_accumulate(times, rates) -> np.ndarray:
    """Trapezoid running integral of the rate series over the stored times."""
    times = np.asarray(times, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if times.shape != rates.shape:
        raise ValueError("times and rates must align")
    if times.size == 0:
        return np.zeros(0)
    return _sciint.cumulative_trapezoid(rates, times, initial=0.0)


# ---------------------------------------------------------------------------
# density and field norms
# ---------------------------------------------------------------------------

def density_field(ensemble_or_positions, weights=None, grid=None, smooth=True,
                  bandwidth=None) -> "analysis.GridField":
    """Cloud-in-cell density estimate on a grid, optionally KDE-smoothed.

    The default bandwidth is twice the cell size (Gaussian kernel), applied
    by separable convolution.  Mass landing outside the grid is dropped;
    callers choosing grids should cover the support.
    """
    if isinstance(ensemble_or_positions, ParticleEnsemble):
        pos = ensemble_or_positions.positions
        w = ensemble_or_positions.weights
    else:
        pos = np.asarray(ensemble_or_positions, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
    if grid is None:
        raise ValueError("a target grid is required")
    values, _lost = kernels.cic_deposit(pos, w, grid.origin, grid.spacing, grid.shape)
    values = values / grid.cell_volume
    if smooth:
        from scipy import ndimage

        h = 2.0 * np.max(grid.spacing) if bandwidth is None else float(bandwidth)
        sigma = h / grid.spacing
        values = ndimage.gaussian_filter(values, sigma=sigma, mode="constant")
    return analysis.GridField(origin=grid.origin, spacing=grid.spacing, values=values)


def density_norm(ensemble, p: float, grid, smooth=True, bandwidth=None) -> float:
    """L^p norm estimate of the spatial density on the given grid."""
    if not p >= 1.0:
        raise ValueError("p must be >= 1 (use math.inf for the sup norm)")
    rho = density_field(ensemble, grid=grid, smooth=smooth, bandwidth=bandwidth)
    return analysis.grid_lp_norm(rho.values, p, rho.cell_volume)


def field_norm(field_values, q: float, cell_volume: float) -> float:
    """Quadrature L^q norm of a gridded vector field (q = inf for the max)."""
    vals = np.asarray(field_values, dtype=np.float64)
    mag = np.sqrt(np.sum(vals**2, axis=-1)) if vals.shape[-1] == 3 and vals.ndim > 1 else np.abs(vals)
    return analysis.grid_lp_norm(mag, q, cell_volume)


def holder_seminorm(field: "analysis.GridField", alpha: float, n_pairs: int = 2000,
                    seed: int = 0) -> float:
    """Max of |E(x) - E(y)| / |x - y|^alpha over a deterministic pair sample.

    Pairs are drawn among distinct grid nodes with a seeded generator, so the
    estimate is reproducible; it lower-bounds the true seminorm.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    nodes = field.node_coordinates().reshape(-1, 3)
    vals = field.values.reshape(nodes.shape[0], -1)
    rng = np.random.default_rng(seed)
    n = nodes.shape[0]
    if n < 2:
        raise ValueError("need at least two grid nodes")
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = np.where(j >= i, j + 1, j)  # distinct partner
    dist = np.linalg.norm(nodes[i] - nodes[j], axis=1)
    diff = np.linalg.norm(vals[i] - vals[j], axis=1)
    return float(np.max(diff / dist**alpha))


def interpolation_constant(m: float) -> float:
    """Explicit constant in the kinetic interpolation bound.

    Derived by optimizing the split rho(x) <= (4pi/3) R^3 sup f
    + R^-m int |v|^m f dv over R, then integrating in x:

        C(m) = (4pi/3)^(m/(m+3)) * [ (m/3)^(3/(m+3)) + (m/3)^(-m/(m+3)) ].
    """
    if m <= 0:
        raise ValueError("m must be positive")
    p3 = 3.0 / (m + 3.0)
    pm = m / (m + 3.0)
    return (4.0 * math.pi / 3.0) ** pm * ((m / 3.0) ** p3 + (m / 3.0) ** -pm)


def interpolation_check(ensemble: ParticleEnsemble, m: float, grid) -> float:
    """Ratio of the estimated ||rho||_{(m+3)/3} to its interpolation bound.

    The bound is C(m) * (sup f0)^(m/(m+3)) * (velocity m-moment)^(3/(m+3))
    with the analytic sup of the ensemble's reference density.  Values should
    sit at or below 1 up to density-estimation slack.  A zero ensemble maps
    to 0 by convention.
    """
    w = ensemble.weights
    total = float(np.sum(w))
    if total == 0.0:
        return 0.0
    if ensemble.f0_ref is None:
        raise ValueError("interpolation_check needs the analytic f0 reference for sup f")
    p = (m + 3.0) / 3.0
    lhs = density_norm(ensemble, p, grid)
    vmoment = energy_moment(ensemble, None, m)
    rhs = interpolation_constant(m) * ensemble.f0_ref.f_max ** (m / (m + 3.0)) \
        * vmoment ** (3.0 / (m + 3.0))
    return lhs / rhs


# ---------------------------------------------------------------------------
# fitted bounds and series assembly
# ---------------------------------------------------------------------------

def fit_power_bound(times, values):
    """Fit values(t) <= C (1+t)^c: least-squares exponent, then the smallest
    C that majorizes the data with that exponent.

    Returns (C, c).  Requires positive values.
    """
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if np.any(v <= 0.0):
        raise ValueError("power-law fit needs positive values")
    lt = np.log1p(t)
    lv = np.log(v)
    if np.allclose(lt, lt[0]):
        return float(np.max(v)), 0.0
    c = float(np.polyfit(lt, lv, 1)[0])
    bound = float(np.max(v / (1.0 + t) ** c))
    return bound, c


def charge_bound_report(series: "DiagnosticSeries", xi0) -> dict:
    """Pointwise speed/excursion bounds for the charge from initial energy.

    Both bounds follow from energy conservation with nonnegative terms:
    |eta(t)| <= sqrt(2 H(0)) and |xi(t)| <= |xi0| + t sqrt(2 H(0)).
    """
    h0 = float(series.energy_total[0])
    cap = math.sqrt(2.0 * h0)
    t = series.times
    xi0n = float(np.linalg.norm(np.asarray(xi0, dtype=np.float64)))
    eta_ok = series.eta_norm <= cap * (1.0 + 1e-6)
    xi_ok = series.xi_norm <= xi0n + t * cap * (1.0 + 1e-6) + 1e-12
    return {
        "speed_cap": cap,
        "max_speed": float(np.max(series.eta_norm)),
        "speed_ok": bool(np.all(eta_ok)),
        "max_excursion": float(np.max(series.xi_norm)),
        "excursion_ok": bool(np.all(xi_ok)),
    }


def snapshot_row(t, x, v, w, xi, eta, eps, include_charge, moment_orders):
    """One diagnostics row from raw state arrays (used inside run loops)."""
    v2 = np.einsum("ij,ij->i", v, v)
    kin_plasma = 0.5 * float(w @ v2)
    pot_pp = kernels.pair_potential(x, w, eps * eps)
    row = {
        "t": float(t),
        "mass": math.fsum(w),
        "kinetic_plasma": kin_plasma,
        "kinetic_charge": 0.0,
        "potential_pp": pot_pp,
        "potential_pc": 0.0,
        "eta_norm": 0.0,
        "xi_norm": 0.0,
        "min_charge_distance": math.inf,
    }
    live = w > 0.0
    if include_charge:
        xi = np.asarray(xi, dtype=np.float64)
        eta = np.asarray(eta, dtype=np.float64)
        r = np.linalg.norm(x - xi, axis=1)
        row["kinetic_charge"] = 0.5 * float(eta @ eta)
        row["potential_pc"] = float(np.sum(w[live] / r[live]))
        row["eta_norm"] = float(np.linalg.norm(eta))
        row["xi_norm"] = float(np.linalg.norm(xi))
        row["min_charge_distance"] = float(np.min(r)) if r.size else math.inf
        row["virial_rate"] = float(np.sum(w[live] / r[live] ** 2))
        base = v2 + np.where(r > 0.0, 1.0 / r, np.inf)
        base = np.where(live, base, 0.0)
    else:
        row["virial_rate"] = 0.0
        base = np.where(live, v2, 0.0)
    for m in moment_orders:
        row[f"moment_{m:g}"] = float(w @ base ** (m / 2.0))
    row["energy_total"] = (
        row["kinetic_plasma"] + row["kinetic_charge"]
        + row["potential_pp"] + row["potential_pc"]
    )
    return row


@dataclass(frozen=True, eq=False)
class DiagnosticSeries:
    """Column-per-functional time series collected along a run."""

    times: np.ndarray
    mass: np.ndarray
    energy_total: np.ndarray
    kinetic_plasma: np.ndarray
    kinetic_charge: np.ndarray
    potential_pp: np.ndarray
    potential_pc: np.ndarray
    moments: dict
    virial_rate: np.ndarray
    virial_integral: np.ndarray
    eta_norm: np.ndarray
    xi_norm: np.ndarray
    min_charge_distance: np.ndarray
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows, moment_orders):
        cols = {k: np.array([r[k] for r in rows]) for k in rows[0]}
        virial = virial_accumulate(cols["t"], cols["virial_rate"])
        return cls(
            times=cols["t"],
            mass=cols["mass"],
            energy_total=cols["energy_total"],
            kinetic_plasma=cols["kinetic_plasma"],
            kinetic_charge=cols["kinetic_charge"],
            potential_pp=cols["potential_pp"],
            potential_pc=cols["potential_pc"],
            moments={float(m): cols[f"moment_{m:g}"] for m in moment_orders},
            virial_rate=cols["virial_rate"],
            virial_integral=virial,
            eta_norm=cols["eta_norm"],
            xi_norm=cols["xi_norm"],
            min_charge_distance=cols["min_charge_distance"],
        )

    def energy_drift(self) -> float:
        h0 = float(self.energy_total[0])
        return float(np.max(np.abs(self.energy_total - h0)) / abs(h0))

    def to_table(self):
        """(header, 2D array) pairing for serialization."""
        cols = [
            ("t", self.times),
            ("mass", self.mass),
            ("energy_total", self.energy_total),
            ("kinetic_plasma", self.kinetic_plasma),
            ("kinetic_charge", self.kinetic_charge),
            ("potential_pp", self.potential_pp),
            ("potential_pc", self.potential_pc),
        ]
        for m in sorted(self.moments):
            cols.append((f"moment_{m:g}", self.moments[m]))
        cols += [
            ("virial_rate", self.virial_rate),
            ("virial_integral", self.virial_integral),
            ("eta_norm", self.eta_norm),
            ("xi_norm", self.xi_norm),
            ("min_charge_distance", self.min_charge_distance),
        ]
        for k in sorted(self.extras):
            cols.append((k, np.asarray(self.extras[k])))
        header = [c[0] for c in cols]
        return header, np.column_stack([c[1] for c in cols])

    def summary(self, xi0=None) -> dict:
        """Fitted bounds and verdicts for the standard run-level checks."""
        out = {
            "mass_constant": bool(np.all(self.mass == self.mass[0])),
            "energy_drift": self.energy_drift(),
            "components_nonnegative": bool(
                np.all(self.kinetic_plasma >= 0) and np.all(self.kinetic_charge >= 0)
                and np.all(self.potential_pp >= 0) and np.all(self.potential_pc >= 0)
            ),
            "moment_bounds": {},
        }
        for m, vals in self.moments.items():
            c_bound, c_exp = fit_power_bound(self.times, vals)
            out["moment_bounds"][f"{m:g}"] = {"C": c_bound, "c": c_exp}
        t = self.times
        with np.errstate(invalid="ignore"):
            ratio = self.virial_integral / (1.0 + t)
        out["virial_bound"] = float(np.max(ratio))
        if xi0 is not None:
            out["charge_bounds"] = charge_bound_report(self, xi0)
        return out


def compute_norm_series(flow, grid, p_list=(5.0 / 3.0,), q_list=(15.0 / 4.0,),
                        eps=0.0, holder_alpha=None, weak_p=1.5):
    """Per-stored-time density/field norms reconstructed from a FlowRecord.

    Heavier than the in-run diagnostics (each time needs a grid field
    evaluation), so it is a separate pass.  Uses the run's cutoff weights.
    Returns a dict of arrays including the analytic weak pseudo-norm of the
    unit point-charge field, which is time-independent by construction.
    """
    w = flow.weights
    out = {f"rho_L{p:g}": [] for p in p_list}
    for q in q_list:
        out[f"E_L{q:g}"] = []
    if holder_alpha is not None:
        out[f"E_holder_{holder_alpha:g}"] = []
    out["F_weak_M1.5"] = []
    nodes = grid.node_coordinates().reshape(-1, 3)
    for k in range(flow.times.shape[0]):
        pos = flow.X[k]
        rho = density_field(pos, w, grid=grid)
        for p in p_list:
            out[f"rho_L{p:g}"].append(analysis.grid_lp_norm(rho.values, p, grid.cell_volume))
        evals = kernels.field_direct(nodes, pos, w, eps * eps).reshape(*grid.shape, 3)
        for q in q_list:
            out[f"E_L{q:g}"].append(field_norm(evals, q, grid.cell_volume))
        if holder_alpha is not None:
            gf = analysis.GridField(origin=grid.origin, spacing=grid.spacing, values=evals)
            out[f"E_holder_{holder_alpha:g}"].append(holder_seminorm(gf, holder_alpha))
        out["F_weak_M1.5"].append(analysis.point_charge_weak_norm(weak_p))
    return {k: np.array(v) for k, v in out.items()}
