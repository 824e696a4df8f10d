"""Shared fixtures.

The acceptance criteria all ride the same standard workload (default profile,
N = 4096, T = 1, cutoff ladder n in {4,...,64}), which costs minutes to
integrate.  Everything expensive is session-scoped here so the ladder runs
once; unit-test modules build their own small ensembles instead.
"""
import dataclasses

import numpy as np
import pytest

from vppc import (
    ParticleEnsemble,
    PointChargeState,
    SimulationConfig,
    apply_cutoff,
    default_density,
    run_ensemble,
    sample_initial_ensemble,
)

HORIZON = 1.0
PARTICLES = 4096
SEED = 1729
LADDER_LEVELS = (4, 8, 16, 32, 64)


@pytest.fixture(scope="session")
def density():
    return default_density()


@pytest.fixture(scope="session")
def base_ensemble(density):
    return sample_initial_ensemble(density, PARTICLES, SEED)


@pytest.fixture(scope="session")
def charge0(density):
    return PointChargeState(xi=np.asarray(density.charge_center, dtype=float),
                            eta=np.asarray(density.charge_velocity, dtype=float))


@pytest.fixture(scope="session")
def ladder(base_ensemble, charge0):
    """reg_index -> (FlowRecord, DiagnosticSeries), one shared seed draw."""
    cfg = SimulationConfig(horizon=HORIZON, particles=PARTICLES, seed=SEED)
    out = {}
    for n in LADDER_LEVELS:
        cfg_n = dataclasses.replace(cfg, reg_index=n)
        out[n] = run_ensemble(cfg_n, apply_cutoff(base_ensemble, n), charge0,
                              mu_weights=base_ensemble.weights)
    return out


@pytest.fixture(scope="session")
def standard_run(ladder):
    """The n = 8 member of the ladder: the standard-settings run."""
    return ladder[8]


@pytest.fixture(scope="session")
def doubled_run(density, charge0):
    # N-doubling comparison partner: half the standard count, same settings
    cfg = SimulationConfig(horizon=HORIZON, reg_index=8, particles=2048, seed=SEED)
    base = sample_initial_ensemble(density, 2048, SEED)
    return run_ensemble(cfg, apply_cutoff(base, 8), charge0,
                        mu_weights=base.weights)


@pytest.fixture(scope="session")
def tracer_runs(base_ensemble, charge0):
    """Forward and velocity-reversed runs carrying 7 zero-weight tracers.

    The tracers form a phase-space simplex (base point + one offset h along
    each of the six axes) riding the n = 8 field without sourcing it; the
    6-volume of that simplex and the reversibility of the trajectories are
    integrator health checks independent of the sampled plasma.
    """
    h = 1.0e-2
    x0 = np.array([0.0, 2.5, 0.0])
    v0 = np.array([0.0, 0.0, 0.3])
    tr_pos, tr_vel = [x0], [v0]
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        tr_pos.append(x0 + e)
        tr_vel.append(v0)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        tr_pos.append(x0)
        tr_vel.append(v0 + e)

    cut8 = apply_cutoff(base_ensemble, 8)
    ens_tr = ParticleEnsemble(
        positions=np.vstack([cut8.positions, tr_pos]),
        velocities=np.vstack([cut8.velocities, tr_vel]),
        weights=np.concatenate([cut8.weights, np.zeros(7)]),
        seed_ids=np.concatenate([cut8.seed_ids,
                                 -np.arange(1, 8, dtype=np.int64)]),
        f0_ref=None,
    )
    mu = np.concatenate([base_ensemble.weights, np.zeros(7)])
    cfg = SimulationConfig(horizon=0.5, reg_index=8, particles=PARTICLES,
                           seed=SEED)
    fwd, _ = run_ensemble(cfg, ens_tr, charge0, mu_weights=mu)

    ens_rev = ParticleEnsemble(
        positions=fwd.X[-1], velocities=-fwd.V[-1],
        weights=ens_tr.weights, seed_ids=ens_tr.seed_ids, f0_ref=None,
    )
    charge_rev = PointChargeState(xi=fwd.xi[-1], eta=-fwd.eta[-1])
    bwd, _ = run_ensemble(cfg, ens_rev, charge_rev, mu_weights=mu)
    return {"h": h, "initial": ens_tr, "forward": fwd, "backward": bwd}
