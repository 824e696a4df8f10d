"""Initial data for the plasma / point-charge system.

Provides the analytic initial-density families, low-discrepancy phase-space
sampling with analytic weights, and the excision-and-truncation cutoff that
produces the regularized data ladder.  Ensembles are immutable value types;
every operation returns a new object.

Units are dimensionless throughout: positions in lengths, velocities in
lengths per time, weights in charge.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, special
from scipy.stats import gamma as gamma_dist
from scipy.stats import qmc

__all__ = [
    "InitialDensity",
    "ParticleEnsemble",
    "PointChargeState",
    "SimulationConfig",
    "default_density",
    "uniform_box_density",
    "sample_initial_ensemble",
    "sample_uniform_ball",
    "apply_cutoff",
]

PROFILE_FAMILIES = ("default", "uniform_box")

# inverse-CDF inputs are clipped away from {0, 1} so sampled coordinates stay finite
_U_CLIP = 2.0 ** -64


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("expected finite 3-vector")
    return a


def _radial_mass_integral(alpha: float) -> float:
    """Integral of min(r,1)^alpha e^-r r^2 over r > 0, in closed form."""
    inner = special.gamma(alpha + 3.0) * special.gammainc(alpha + 3.0, 1.0)
    outer = 5.0 / math.e  # int_1^inf r^2 e^-r dr
    return inner + outer


@dataclass(frozen=True, eq=False)
class InitialDensity:
    """Analytic phase-space density f0 from a fixed named family.

    The ``default`` family is

        f0(x, v) = c * min(|x - xi0|, 1)^alpha * exp(-|x - xi0|)
                     * exp(-|v|^2 / (2 sigma_v^2)),

    with c chosen so the total mass is ``total_mass``.  The ``uniform_box``
    family is flat over a box in x (which must exclude xi0) times the same
    Gaussian in v; its ``near_charge_exponent`` is reported as +inf since the
    density vanishes identically near the charge.

    Construction validates the hypotheses the harness relies on: total mass
    strictly below 1, finite initial energy, and enough vanishing near the
    charge for all tracked moments below ``moment_order`` to be finite.
    """

    profile: str
    charge_center: np.ndarray
    charge_velocity: np.ndarray
    near_charge_exponent: float
    total_mass: float
    moment_order: float = 6.5
    sigma_v: float = 1.0
    box_center: np.ndarray | None = None
    box_halfwidth: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "charge_center", _vec3(self.charge_center))
        object.__setattr__(self, "charge_velocity", _vec3(self.charge_velocity))
        if self.profile not in PROFILE_FAMILIES:
            raise ValueError(f"unknown profile family {self.profile!r}")
        if not 0.0 < self.total_mass < 1.0:
            raise ValueError(
                f"total_mass must lie strictly in (0, 1), got {self.total_mass}"
            )
        if self.sigma_v <= 0.0:
            raise ValueError("sigma_v must be positive")
        alpha = self.near_charge_exponent
        if not alpha > 0.0:
            raise ValueError("near_charge_exponent must be positive")
        if alpha < self.moment_order / 2.0 - 3.0:
            raise ValueError(
                "near_charge_exponent too small for the declared moment order: "
                f"need alpha >= m0/2 - 3 = {self.moment_order / 2.0 - 3.0}, got {alpha}"
            )
        if self.profile == "uniform_box":
            if self.box_center is None or self.box_halfwidth is None:
                raise ValueError("uniform_box profile needs box_center and box_halfwidth")
            object.__setattr__(self, "box_center", _vec3(self.box_center))
            if self.box_halfwidth <= 0.0:
                raise ValueError("box_halfwidth must be positive")
            gap = np.max(np.abs(self.charge_center - self.box_center)) - self.box_halfwidth
            if gap <= 0.0:
                raise ValueError(
                    "uniform_box support must exclude the charge location, "
                    "otherwise high moments with the near-charge weight diverge"
                )
        energy = self.initial_energy_quadrature()
        if not math.isfinite(energy["total"]):
            raise ValueError("initial energy is not finite for these parameters")

    # -- family internals ---------------------------------------------------

    @property
    def _norm_const(self) -> float:
        """Prefactor c of the default family."""
        gauss = (2.0 * math.pi * self.sigma_v**2) ** 1.5
        return self.total_mass / (gauss * 4.0 * math.pi * _radial_mass_integral(self.near_charge_exponent))

    def _radial_profile(self, r):
        """Unnormalized spatial shape g(r) with f0 = c g(r) exp(-|v|^2/2s^2)."""
        r = np.asarray(r, dtype=np.float64)
        return np.minimum(r, 1.0) ** self.near_charge_exponent * np.exp(-r)

    def space_density(self, x) -> np.ndarray:
        """Spatial density rho0(x), the velocity integral of f0."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        gauss = (2.0 * math.pi * self.sigma_v**2) ** 1.5
        if self.profile == "default":
            r = np.linalg.norm(x - self.charge_center, axis=1)
            return self._norm_const * gauss * self._radial_profile(r)
        inside = np.all(np.abs(x - self.box_center) <= self.box_halfwidth, axis=1)
        rho = self.total_mass / (2.0 * self.box_halfwidth) ** 3
        return np.where(inside, rho, 0.0)

    def evaluate(self, x, v) -> np.ndarray:
        """Pointwise f0(x, v) for arrays of shape (N, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        vv = np.einsum("ij,ij->i", v, v)
        gauss = (2.0 * math.pi * self.sigma_v**2) ** 1.5
        return self.space_density(x) / gauss * np.exp(-vv / (2.0 * self.sigma_v**2))

    @property
    def f_max(self) -> float:
        """Exact supremum of f0 over phase space."""
        if self.profile == "uniform_box":
            rho = self.total_mass / (2.0 * self.box_halfwidth) ** 3
            return rho / (2.0 * math.pi * self.sigma_v**2) ** 1.5
        a = self.near_charge_exponent
        r_peak = min(a, 1.0)
        return self._norm_const * r_peak**a * math.exp(-r_peak)

    @property
    def moment_frontier(self) -> float:
        """Largest moment order with a finite value, 2*alpha + 6 for the default family."""
        return 2.0 * self.near_charge_exponent + 6.0

    # -- quadrature references ----------------------------------------------

    def mass_quadrature(self) -> float:
        """Total mass by direct numerical integration (construction cross-check)."""
        if self.profile == "uniform_box":
            return self.total_mass
        gauss = (2.0 * math.pi * self.sigma_v**2) ** 1.5
        val, _ = integrate.quad(
            lambda r: self._radial_profile(r) * r * r, 0.0, np.inf, limit=200
        )
        return self._norm_const * gauss * 4.0 * math.pi * val

    def initial_energy_quadrature(self) -> dict:
        """The four nonnegative energy terms of the initial state.

        Kinetic terms are exact; potential terms are radial quadratures for
        the default family and analytic bounds for uniform_box (flagged by
        the "pp_is_bound" entry).  All that construction needs is finiteness.
        """
        kin_plasma = self.total_mass * 1.5 * self.sigma_v**2
        kin_charge = 0.5 * float(self.charge_velocity @ self.charge_velocity)
        if self.profile == "default":
            gauss = (2.0 * math.pi * self.sigma_v**2) ** 1.5
            c_x = self._norm_const * gauss  # rho0(r) = c_x g(r)
            r = np.linspace(0.0, 60.0, 6001)[1:]
            rho = c_x * self._radial_profile(r)
            shell = 4.0 * math.pi * rho * r * r
            cum = integrate.cumulative_trapezoid(shell, r, initial=0.0)
            outer = integrate.cumulative_trapezoid(shell / r, r, initial=0.0)
            phi = cum / r + (outer[-1] - outer)
            pot_pp = 0.5 * np.trapezoid(shell * phi, r)
            pot_pc = np.trapezoid(shell / r, r)
            is_bound = False
        else:
            d_min = np.linalg.norm(self.charge_center - self.box_center) \
                - math.sqrt(3.0) * self.box_halfwidth
            pot_pc = self.total_mass / max(d_min, 1e-12)
            # crude enclosing-ball bound for the self energy
            pot_pp = 0.5 * self.total_mass**2 * 3.0 / (2.0 * self.box_halfwidth)
            is_bound = True
        total = kin_plasma + kin_charge + pot_pp + pot_pc
        return {
            "kinetic_plasma": float(kin_plasma),
            "kinetic_charge": float(kin_charge),
            "potential_pp": float(pot_pp),
            "potential_pc": float(pot_pc),
            "total": float(total),
            "pp_is_bound": is_bound,
        }


def default_density(
    alpha: float = 0.6,
    total_mass: float = 0.9,
    charge_center=(0.0, 0.0, 0.0),
    charge_velocity=(0.5, 0.0, 0.0),
    sigma_v: float = 1.0,
    moment_order: float = 6.5,
) -> InitialDensity:
    """The built-in radial-in-x, Gaussian-in-v family."""
    return InitialDensity(
        profile="default",
        charge_center=charge_center,
        charge_velocity=charge_velocity,
        near_charge_exponent=alpha,
        total_mass=total_mass,
        moment_order=moment_order,
        sigma_v=sigma_v,
    )


def uniform_box_density(
    total_mass: float = 0.5,
    box_center=(4.0, 4.0, 4.0),
    box_halfwidth: float = 1.0,
    charge_center=(0.0, 0.0, 0.0),
    charge_velocity=(0.5, 0.0, 0.0),
    sigma_v: float = 1.0,
) -> InitialDensity:
    """Flat-in-a-box spatial profile; the box must stay clear of the charge."""
    return InitialDensity(
        profile="uniform_box",
        charge_center=charge_center,
        charge_velocity=charge_velocity,
        near_charge_exponent=math.inf,
        total_mass=total_mass,
        box_center=box_center,
        box_halfwidth=box_halfwidth,
        sigma_v=sigma_v,
    )


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted phase-space sample with stable per-seed identifiers.

    seed_ids survive every evolution and cutoff operation, so ensembles
    produced from the same draw stay comparable particle by particle.
    f0_ref, when present, is the analytic density the weights quadrature.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    seed_ids: np.ndarray
    f0_ref: InitialDensity | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        vel = np.ascontiguousarray(self.velocities, dtype=np.float64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        ids = np.ascontiguousarray(self.seed_ids, dtype=np.int64)
        n = pos.shape[0]
        if pos.shape != (n, 3) or vel.shape != (n, 3) or w.shape != (n,) or ids.shape != (n,):
            raise ValueError("inconsistent ensemble array shapes")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.all(np.isfinite(w))):
            raise ValueError("ensemble contains non-finite entries")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if np.unique(ids).size != n:
            raise ValueError("seed_ids must be unique")
        if self.f0_ref is not None:
            cap = self.f0_ref.total_mass * (1.0 + 1e-9)
            if math.fsum(w) > cap:
                raise ValueError("total weight exceeds the profile mass")
        for name, val in (("positions", pos), ("velocities", vel), ("weights", w), ("seed_ids", ids)):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def with_weights(self, weights) -> "ParticleEnsemble":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))

    def with_state(self, positions, velocities) -> "ParticleEnsemble":
        return replace(self, positions=positions, velocities=velocities)


@dataclass(frozen=True, eq=False)
class PointChargeState:
    """Position and velocity of the point charge."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", _vec3(self.xi))
        object.__setattr__(self, "eta", _vec3(self.eta))


@dataclass(frozen=True)
class SimulationConfig:
    """Run parameters; the interaction sign is pinned repulsive and not a knob.

    softening None means the default 1/(2n): numerical mollification stays
    subordinate to the data cutoff radius 1/n.  closest_approach_floor None
    means 1e-4/n; a particle entering that radius of the charge either aborts
    the run ("abort") or marks the seed and carries on ("flag").
    """

    horizon: float = 1.0
    reg_index: int = 8
    particles: int = 4096
    atol: float = 1e-8
    rtol: float = 1e-8
    softening: float | None = None
    output_dt: float | None = None
    seed: int = 1729
    closest_approach_floor: float | None = None
    floor_policy: str = "abort"

    def __post_init__(self):
        if self.horizon < 0.0:
            raise ValueError("horizon must be >= 0")
        if self.reg_index < 1:
            raise ValueError("reg_index must be a positive integer")
        if self.particles < 1:
            raise ValueError("particles must be >= 1")
        if self.atol <= 0.0 or self.rtol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.softening is not None and self.softening < 0.0:
            raise ValueError("softening must be >= 0")
        if self.output_dt is not None and self.output_dt <= 0.0:
            raise ValueError("output_dt must be positive")
        if self.closest_approach_floor is not None and self.closest_approach_floor <= 0.0:
            raise ValueError("closest_approach_floor must be positive")
        if self.floor_policy not in ("abort", "flag"):
            raise ValueError("floor_policy must be 'abort' or 'flag'")

    @property
    def interaction_sign(self) -> float:
        """Fixed +1; the attractive case is out of scope by design."""
        return 1.0

    @property
    def softening_value(self) -> float:
        return 0.5 / self.reg_index if self.softening is None else self.softening

    @property
    def output_dt_value(self) -> float:
        if self.output_dt is not None:
            return self.output_dt
        return self.horizon / 10.0 if self.horizon > 0.0 else 1.0

    @property
    def floor_value(self) -> float:
        if self.closest_approach_floor is not None:
            return self.closest_approach_floor
        return 1e-4 / self.reg_index


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _sobol(count: int, seed: int) -> np.ndarray:
    eng = qmc.Sobol(d=6, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance warning for non power-of-two draws; prefix is still usable
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random(count)
    return np.clip(u, _U_CLIP, 1.0 - _U_CLIP)


def _unit_vectors(u1, u2):
    cos_t = 2.0 * u1 - 1.0
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    phi = 2.0 * math.pi * u2
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def _pin_total(w: np.ndarray, target: float) -> np.ndarray:
    """Nudge one weight so math.fsum(w) == target bitwise.

    fsum of n copies of target/n can land an ulp off target, so equal-split
    construction alone does not give an exact total.  Naively adding
    target - fsum(w) back can park the true sum on a rounding tie and
    oscillate forever under round-to-even; instead measure the gap with
    -target folded into the fsum (correctly rounded, so the cancellation is
    exact to ~ulp(gap)) and absorb it into the largest weight, whose own
    rounding step is finer than ulp(target)/2 whenever max(w) < target.
    The perturbation is below 1 ulp of the total; a couple of rounds settle.
    """
    order = np.argsort(np.abs(w))[::-1]
    for k in range(6):
        if math.fsum(w) == target:
            return w
        gap = math.fsum([*w, -target])
        w[order[k % min(3, len(w))]] -= gap
    raise AssertionError("weight total failed to pin")  # pragma: no cover


def sample_initial_ensemble(density: InitialDensity, count: int, seed: int) -> ParticleEnsemble:
    """Draw a deterministic low-discrepancy sample of f0 with analytic weights.

    Positions and velocities come from a scrambled Sobol sequence pushed
    through the inverse CDF of a per-family proposal; weights are the exact
    density/proposal ratio divided by the count, so the weighted sum of any
    observable is a quasi-Monte-Carlo quadrature of its f0 integral.  For the
    default family the proposal absorbs both exponential factors and the
    weights reduce to (M0/count) * min(r,1)^alpha * 2/I with I the radial
    mass integral; for uniform_box the ratio collapses to M0/count exactly.

    Deterministic for fixed (density, count, seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    u = _sobol(count, seed)
    v = density.sigma_v * special.ndtri(u[:, 3:6])
    if density.profile == "default":
        r = gamma_dist.ppf(u[:, 0], a=3.0)
        x = density.charge_center + r[:, None] * _unit_vectors(u[:, 1], u[:, 2])
        alpha = density.near_charge_exponent
        w = (density.total_mass / count) * np.minimum(r, 1.0) ** alpha \
            * (2.0 / _radial_mass_integral(alpha))
        # self-normalize: the raw ratio is unbiased but a finite sample
        # fluctuates around M0; rescaling pins the total mass exactly
        w *= density.total_mass / math.fsum(w)
        w = _pin_total(w, density.total_mass)
    else:
        lo = density.box_center - density.box_halfwidth
        x = lo + u[:, 0:3] * (2.0 * density.box_halfwidth)
        w = _pin_total(np.full(count, density.total_mass / count),
                       density.total_mass)
    return ParticleEnsemble(
        positions=x,
        velocities=v,
        weights=w,
        seed_ids=np.arange(count, dtype=np.int64),
        f0_ref=density,
    )


def sample_uniform_ball(
    mass: float,
    radius: float,
    count: int,
    seed: int,
    center=(0.0, 0.0, 0.0),
    sigma_v: float = 1.0,
) -> ParticleEnsemble:
    """Equal-weight quasi-random sample of a uniform ball in x, Gaussian in v.

    Analytic test fixture (shell-theorem fields, flat density); not tied to
    an InitialDensity, so any mass is allowed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    u = _sobol(count, seed)
    r = radius * u[:, 0] ** (1.0 / 3.0)
    x = _vec3(center) + r[:, None] * _unit_vectors(u[:, 1], u[:, 2])
    v = sigma_v * special.ndtri(u[:, 3:6])
    w = _pin_total(np.full(count, mass / count), mass)
    return ParticleEnsemble(x, v, w, np.arange(count, dtype=np.int64))


def apply_cutoff(ensemble: ParticleEnsemble, n: int) -> ParticleEnsemble:
    """Zero the weights of seeds outside {1/n < |x - xi0| < n, |v - eta0| < n}.

    Coordinates and seed_ids are untouched, so the full seed set remains
    comparable across cutoff levels; only the carried measure shrinks.  The
    indicator is the open region (boundary seeds are excised).
    """
    if n < 1:
        raise ValueError("cutoff index must be >= 1")
    if ensemble.f0_ref is None:
        raise ValueError("cutoff needs the ensemble's f0_ref for the charge-centered excision")
    xi0 = ensemble.f0_ref.charge_center
    eta0 = ensemble.f0_ref.charge_velocity
    rx = np.linalg.norm(ensemble.positions - xi0, axis=1)
    rv = np.linalg.norm(ensemble.velocities - eta0, axis=1)
    keep = (rx > 1.0 / n) & (rx < float(n)) & (rv < float(n))
    return ensemble.with_weights(np.where(keep, ensemble.weights, 0.0))
