"""Command-line front end.

Subcommands:
  simulate   run one regularized flow, save trajectories + diagnostics
  diagnose   run and check conservation / a priori bounds, verdict JSON
  converge   run a cutoff ladder against a reference level, tabulate
             convergence-in-measure and superlevel decay
  stability  run a cutoff pair, tabulate the log-distance functional and
             the measure-bound consistency check
  norms      run and tabulate density / field norms on a grid

Configuration is YAML (all keys optional, unknown keys rejected with their
dotted path); --set key=value overrides individual entries.  Every output
table carries the package version and a hash of the canonical config, and
each command writes summary.json with machine-readable verdicts.

Exit codes: 0 ok, 1 a verdict check failed, 2 bad configuration,
3 runtime abort (closest-approach floor).  The VPPC_BACKEND environment
variable (auto|numba|numpy) selects the kernel backend.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from .core import (
    SimulationConfig,
    default_density,
    uniform_box_density,
)
from .dynamics import FloorAbortError, run, run_pair
from .diagnostics import compute_norm_series
from .analysis import centered_grid
from .flowmetrics import (
    MetricParams,
    chebyshev_consistency,
    convergence_in_measure,
    phi_functional,
    sublevel_report,
)
from .io import save_ensemble, save_flow, write_table

__all__ = ["main", "ConfigError", "load_config", "DEFAULT_CONFIG"]


class ConfigError(Exception):
    pass


DEFAULT_CONFIG = {
    "density": {
        "family": "default",
        "alpha": 0.6,
        "total_mass": 0.9,
        "sigma_v": 1.0,
        "moment_order": 6.5,
        "charge_center": [0.0, 0.0, 0.0],
        "charge_velocity": [0.5, 0.0, 0.0],
        "box_center": [4.0, 4.0, 4.0],
        "box_halfwidth": 1.0,
    },
    "run": {
        "horizon": 1.0,
        "reg_index": 8,
        "particles": 4096,
        "atol": 1.0e-8,
        "rtol": 1.0e-8,
        "output_dt": None,
        "seed": 1729,
        "floor_policy": "abort",
    },
    "converge": {
        "ladder": [4, 8, 16, 32],
        "reference": 64,
        "gamma_thr": 0.1,
        "r": 5.0,
        "lam": 20.0,
        "time": 0.5,
    },
    "stability": {
        "pair": [8, 16],
        "lam": 20.0,
        "gamma_thr": 0.1,
        "delta1": 0.1,
        "delta2": 0.1,
        "r": 5.0,
        "time": 0.5,
    },
    "norms": {
        "grid_nodes": 33,
        "half_extent": 8.0,
        "p": [1.0, 2.0],
        "weak_p": 1.5,
    },
}


def _merge(base, override, path=""):
    out = dict(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here} must be a mapping")
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


def _apply_set(config, assignment):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"--set needs key=value, got: {assignment}")
    node = {}
    leaf = node
    parts = key.strip().split(".")
    for part in parts[:-1]:
        leaf[part] = {}
        leaf = leaf[part]
    leaf[parts[-1]] = yaml.safe_load(raw)
    return _merge(config, node)


def load_config(path=None, sets=()):
    """Resolve defaults, an optional YAML file, then --set overrides."""
    config = DEFAULT_CONFIG
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        config = _merge(config, loaded)
    for assignment in sets:
        config = _apply_set(config, assignment)
    return config


def canonical_yaml(config) -> str:
    return yaml.safe_dump(config, sort_keys=True, default_flow_style=False)


def config_hash(config) -> str:
    return hashlib.sha256(canonical_yaml(config).encode()).hexdigest()[:12]


def _build_density(cfg):
    d = cfg["density"]
    if d["family"] == "default":
        return default_density(
            alpha=float(d["alpha"]),
            total_mass=float(d["total_mass"]),
            sigma_v=float(d["sigma_v"]),
            moment_order=float(d["moment_order"]),
            charge_center=tuple(float(v) for v in d["charge_center"]),
            charge_velocity=tuple(float(v) for v in d["charge_velocity"]),
        )
    if d["family"] == "uniform_box":
        return uniform_box_density(
            total_mass=float(d["total_mass"]),
            box_center=tuple(float(v) for v in d["box_center"]),
            box_halfwidth=float(d["box_halfwidth"]),
            sigma_v=float(d["sigma_v"]),
            charge_center=tuple(float(v) for v in d["charge_center"]),
            charge_velocity=tuple(float(v) for v in d["charge_velocity"]),
        )
    raise ConfigError(f"unknown density family: {d['family']}")


def _build_sim_config(cfg, **overrides):
    r = dict(cfg["run"])
    r.update(overrides)
    return SimulationConfig(
        horizon=float(r["horizon"]),
        reg_index=int(r["reg_index"]),
        particles=int(r["particles"]),
        atol=float(r["atol"]),
        rtol=float(r["rtol"]),
        output_dt=None if r["output_dt"] is None else float(r["output_dt"]),
        seed=int(r["seed"]),
        floor_policy=str(r["floor_policy"]),
    )


def _meta(cfg, scenario):
    return {"version": __version__, "config_hash": config_hash(cfg), "scenario": scenario}


def _emit(outdir, cfg, scenario, checks, extra=None):
    ok = all(bool(v) for v in checks.values()) if checks else True
    summary = {
        "version": __version__,
        "config_hash": config_hash(cfg),
        "scenario": scenario,
        "checks": checks,
        "ok": ok,
    }
    if extra:
        summary.update(extra)
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
        fh.write("\n")
    print(json.dumps(summary, indent=2, default=float))
    return 0 if ok else 1


def _prepare_outdir(outdir, cfg):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config_echo.yaml"), "w") as fh:
        fh.write(canonical_yaml(cfg))


def _series_columns(series):
    cols = {
        "time": series.times,
        "mass": series.mass,
        "energy_total": series.energy_total,
        "kinetic_plasma": series.kinetic_plasma,
        "kinetic_charge": series.kinetic_charge,
        "potential_pp": series.potential_pp,
        "potential_pc": series.potential_pc,
        "virial_rate": series.virial_rate,
        "virial_integral": series.virial_integral,
        "eta_norm": series.eta_norm,
        "xi_norm": series.xi_norm,
        "min_charge_distance": series.min_charge_distance,
    }
    for m, vals in series.moments.items():
        cols[f"moment_{m:g}"] = vals
    return cols


def cmd_simulate(cfg, outdir):
    flow, series = run(_build_sim_config(cfg), _build_density(cfg))
    save_flow(os.path.join(outdir, "flow.npz"), flow)
    write_table(os.path.join(outdir, "series.csv"), _series_columns(series),
                _meta(cfg, "simulate"))
    return _emit(outdir, cfg, "simulate", {}, {
        "steps_accepted": flow.stats.get("steps"),
        "steps_rejected": flow.stats.get("rejected"),
        "final_time": float(flow.times[-1]),
    })


def cmd_diagnose(cfg, outdir):
    flow, series = run(_build_sim_config(cfg), _build_density(cfg))
    write_table(os.path.join(outdir, "series.csv"), _series_columns(series),
                _meta(cfg, "diagnose"))
    report = series.summary(xi0=flow.xi[0])
    checks = {
        "mass_constant": report["mass_constant"],
        "energy_drift_small": report["energy_drift"] <= 1.0e-3,
        "energy_components_nonnegative": report["components_nonnegative"],
        "charge_speed_bounded": report["charge_bounds"]["speed_ok"],
        "charge_position_bounded": report["charge_bounds"]["excursion_ok"],
        "virial_bound_finite": bool(np.isfinite(report["virial_bound"])),
    }
    return _emit(outdir, cfg, "diagnose", checks, {
        "energy_drift": report["energy_drift"],
        "virial_bound": report["virial_bound"],
        "moment_bounds": report["moment_bounds"],
    })


def cmd_converge(cfg, outdir):
    c = cfg["converge"]
    ladder = [int(n) for n in c["ladder"]]
    ref = int(c["reference"])
    sim = _build_sim_config(cfg)
    density = _build_density(cfg)
    from .core import apply_cutoff, sample_initial_ensemble, PointChargeState
    from .dynamics import run_ensemble
    import dataclasses

    base = sample_initial_ensemble(density, sim.particles, sim.seed)
    charge = PointChargeState(xi=np.array(density.charge_center),
                              eta=np.array(density.charge_velocity))
    flows = {}
    for n in sorted(set(ladder + [ref])):
        level_cfg = dataclasses.replace(sim, reg_index=n)
        flows[n], _ = run_ensemble(level_cfg, apply_cutoff(base, n), charge,
                                   mu_weights=base.weights)
    s = float(c["time"])
    rows_n, rows_conv, rows_sup = [], [], []
    for n in ladder:
        rows_n.append(n)
        rows_conv.append(convergence_in_measure(flows[n], flows[ref],
                                                float(c["gamma_thr"]), float(c["r"]), s))
        rows_sup.append(sublevel_report(flows[n], float(c["r"]), float(c["lam"])).superlevel)
    write_table(os.path.join(outdir, "converge.csv"),
                {"reg_index": np.array(rows_n, dtype=np.int64),
                 "conv_measure": np.array(rows_conv),
                 "superlevel": np.array(rows_sup)},
                _meta(cfg, "converge"))
    inversions = sum(1 for a, b in zip(rows_conv, rows_conv[1:]) if b > a + 1e-15)
    checks = {"ladder_nonincreasing": inversions <= 1}
    return _emit(outdir, cfg, "converge", checks,
                 {"conv_measure": rows_conv, "superlevel": rows_sup, "ladder": rows_n})


def cmd_stability(cfg, outdir):
    c = cfg["stability"]
    n_a, n_b = (int(v) for v in c["pair"])
    sim = _build_sim_config(cfg)
    density = _build_density(cfg)
    flow_a, flow_b = run_pair(sim, density, n_a, n_b)
    params = MetricParams(r=float(c["r"]), lam=float(c["lam"]),
                          gamma_thr=float(c["gamma_thr"]),
                          delta1=float(c["delta1"]), delta2=float(c["delta2"]))
    times = flow_a.times
    phi = [phi_functional(flow_a, flow_b, params, float(t)) for t in times]
    lhs, rhs = [], []
    for t in times:
        l, r = chebyshev_consistency(flow_a, flow_b, params, float(t))
        lhs.append(l)
        rhs.append(r)
    write_table(os.path.join(outdir, "stability.csv"),
                {"time": times, "phi": np.array(phi),
                 "measure_far": np.array(lhs), "measure_bound": np.array(rhs)},
                _meta(cfg, "stability"))
    ok = all(l <= r * (1.0 + 1e-12) + 1e-300 for l, r in zip(lhs, rhs))
    s = float(c["time"])
    return _emit(outdir, cfg, "stability", {"measure_bound_holds": ok},
                 {"phi_at_time": phi_functional(flow_a, flow_b, params, s)})


def cmd_norms(cfg, outdir):
    c = cfg["norms"]
    sim = _build_sim_config(cfg)
    density = _build_density(cfg)
    flow, _ = run(sim, density)
    grid = centered_grid(center=np.asarray(density.charge_center, dtype=np.float64),
                         half_extent=float(c["half_extent"]), nodes=int(c["grid_nodes"]))
    p_list = [float(p) for p in c["p"]]
    table = compute_norm_series(flow, grid, p_list=p_list, q_list=p_list,
                                weak_p=float(c["weak_p"]))
    cols = {"time": flow.times}
    cols.update(table)
    write_table(os.path.join(outdir, "norms.csv"), cols, _meta(cfg, "norms"))
    return _emit(outdir, cfg, "norms", {}, {
        "weak_norm_final": float(table["F_weak_M1.5"][-1]),
    })


_COMMANDS = {
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "converge": cmd_converge,
    "stability": cmd_stability,
    "norms": cmd_norms,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vppc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"vppc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", default=None, help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted keys)")
        p.add_argument("-o", "--outdir", default="out", help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        _prepare_outdir(args.outdir, cfg)
        return _COMMANDS[args.command](cfg, args.outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FloorAbortError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
