"""Result records, config digests, CSV export and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

REQUIRED_FIELDS = ("schema_version", "config_digest", "N", "steps", "n_traj", "density",
                   "var_ratio", "correlations", "lqu", "absorbed_fraction", "wall_time")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def make_record(config: dict, gate_fields: dict, obs, lqu_points=None, wall_time=None) -> dict:
    rec = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest(config),
        **gate_fields,
        "N": obs.n_sites,
        "steps": config["steps"],
        "n_traj": obs.n_traj,
        "density": float(obs.density),
        "density_err": _finite_or_none(obs.density_err),
        "var_ratio": float(obs.var_ratio),
        "correlations": [[c.d, float(c.c2), float(c.connected)] for c in obs.correlations],
        "lqu": [] if lqu_points is None else [[p.d, p.value] for p in lqu_points],
        "absorbed_fraction": float(obs.absorbed_fraction),
        "density_t": [float(v) for v in obs.density_t],
        "wall_time": wall_time,
    }
    if lqu_points is not None:
        bad = {p.d: p.violation for p in lqu_points if p.violation}
        if bad:
            rec["lqu_infeasible"] = {str(d): v for d, v in bad.items()}
    return rec


def _finite_or_none(v):
    return None if v is None or not math.isfinite(v) else float(v)


def validate_record(rec: dict) -> dict:
    """Raise ValueError unless ``rec`` is a well-formed result record."""
    missing = [k for k in REQUIRED_FIELDS if k not in rec]
    if missing:
        raise ValueError(f"record lacks fields {missing}")
    if rec["schema_version"] != SCHEMA_VERSION:
        raise ValueError("unsupported schema version")
    if "x" not in rec and "x_k" not in rec:
        raise ValueError("record lacks gate parameters")

    def walk(v):
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError("non-finite number in record")
        if isinstance(v, (list, tuple)):
            for u in v:
                walk(u)
        if isinstance(v, dict):
            for u in v.values():
                walk(u)

    walk(rec)
    for d, c2, conn in rec["correlations"]:
        if not -1e-12 <= c2 <= 1 + 1e-12:
            raise ValueError(f"correlation at d={d} outside [0, 1]")
    if not 0.0 <= rec["density"] <= 1.0:
        raise ValueError("density outside [0, 1]")
    return rec


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [validate_record(json.loads(line)) for line in fh if line.strip()]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def matrix_to_pairs(m: np.ndarray) -> list:
    """Row-major [[re, im], ...] for JSON fixtures."""
    return [[float(z.real), float(z.imag)] for z in np.asarray(m).ravel()]


def pairs_to_matrix(pairs, dim: int) -> np.ndarray:
    return np.array([complex(a, b) for a, b in pairs]).reshape(dim, dim)


# -- checkpoints --

def save_checkpoint(path, state: dict):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(state, fh)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        state = json.load(fh)
    if state.get("schema_version") != SCHEMA_VERSION:
        raise ValueError("checkpoint written by an incompatible version")
    return state
