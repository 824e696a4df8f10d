"""Flat-file persistence for ensembles, flow records, and diagnostic tables.

Array payloads go to NPZ with every float array cast to little-endian
float64 ('<f8') and ids to little-endian int64 ('<i8'), so files are
byte-identical across platforms.  Tables go to CSV with a header row; all
floats are written with repr-roundtrip precision.
"""

from __future__ import annotations

import csv

import numpy as np

from .core import ParticleEnsemble, PointChargeState
from .dynamics import FlowRecord

__all__ = [
    "save_ensemble",
    "load_ensemble",
    "save_flow",
    "load_flow",
    "write_table",
    "read_table",
]

_F8 = np.dtype("<f8")
_I8 = np.dtype("<i8")


def _f(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64), dtype=_F8)


def save_ensemble(path, ensemble: ParticleEnsemble, charge: PointChargeState | None = None):
    """Write particle state (and optionally the charge) to an NPZ file."""
    payload = {
        "positions": _f(ensemble.positions),
        "velocities": _f(ensemble.velocities),
        "weights": _f(ensemble.weights),
        "seed_ids": np.ascontiguousarray(ensemble.seed_ids, dtype=_I8),
    }
    if charge is not None:
        payload["xi"] = _f(charge.xi)
        payload["eta"] = _f(charge.eta)
    np.savez(path, **payload)


def load_ensemble(path):
    """Read an NPZ written by save_ensemble.

    Returns (ensemble, charge); charge is None when the file has no charge
    state.  The reloaded ensemble carries no density reference.
    """
    with np.load(path) as data:
        ens = ParticleEnsemble(
            positions=data["positions"].astype(np.float64),
            velocities=data["velocities"].astype(np.float64),
            weights=data["weights"].astype(np.float64),
            seed_ids=data["seed_ids"].astype(np.int64),
            f0_ref=None,
        )
        charge = None
        if "xi" in data:
            charge = PointChargeState(xi=data["xi"].astype(np.float64),
                                      eta=data["eta"].astype(np.float64))
    return ens, charge


def save_flow(path, flow: FlowRecord):
    """Write a trajectory record to an NPZ file."""
    np.savez(
        path,
        seed_ids=np.ascontiguousarray(flow.seed_ids, dtype=_I8),
        times=_f(flow.times),
        X=_f(flow.X),
        V=_f(flow.V),
        xi=_f(flow.xi),
        eta=_f(flow.eta),
        reg_index=np.asarray([flow.reg_index], dtype=_I8),
        weights=_f(flow.weights),
        mu_weights=_f(flow.mu_weights),
        min_seed_distance=_f(flow.min_seed_distance),
        floor_hit=np.ascontiguousarray(flow.floor_hit.astype(np.int64), dtype=_I8),
    )


def load_flow(path) -> FlowRecord:
    with np.load(path) as d:
        return FlowRecord(
            seed_ids=d["seed_ids"].astype(np.int64),
            times=d["times"].astype(np.float64),
            X=d["X"].astype(np.float64),
            V=d["V"].astype(np.float64),
            xi=d["xi"].astype(np.float64),
            eta=d["eta"].astype(np.float64),
            reg_index=int(d["reg_index"][0]),
            weights=d["weights"].astype(np.float64),
            mu_weights=d["mu_weights"].astype(np.float64),
            min_seed_distance=d["min_seed_distance"].astype(np.float64),
            floor_hit=d["floor_hit"].astype(bool),
            stats={},
        )


def write_table(path, columns: dict, meta: dict | None = None):
    """Write named columns to CSV; one '# key=value' comment line per meta item."""
    names = list(columns)
    cols = [np.asarray(columns[k]).ravel() for k in names]
    length = cols[0].shape[0]
    if any(c.shape[0] != length for c in cols):
        raise ValueError("table columns differ in length")
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow([repr(float(c[i])) if np.issubdtype(c.dtype, np.floating)
                             else str(c[i]) for c in cols])


def read_table(path):
    """Read a CSV written by write_table; returns (columns dict, meta dict)."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val
                continue
            rows.append(line)
    parsed = list(csv.reader(rows))
    names = parsed[0]
    body = parsed[1:]
    columns = {}
    for j, name in enumerate(names):
        raw = [row[j] for row in body]
        try:
            columns[name] = np.array([float(v) for v in raw], dtype=np.float64)
        except ValueError:
            columns[name] = np.array(raw)
    return columns, meta
