"""JSON and CSV (de)serialization plus atomic file output.

Complex arrays are stored as ``{"dim": n, "data": [[re, im], ...]}`` with
matrices flattened row-major. Projector families use
``{"dim", "cells", "labels", "resolution", "exhaustive"}`` where each cell is
either a list of basis indices or a list of orthonormal vectors, each vector
itself a list of ``[re, im]`` pairs.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynamics.rates import RateMatrix
from .dynamics.sampling import Ensemble
from .exceptions import ConfigError
from .microstates import ProjectorFamily

__all__ = [
    "SCHEMA_VERSION",
    "array_to_json",
    "state_from_json",
    "matrix_from_json",
    "family_to_json",
    "family_from_json",
    "load_json",
    "load_config",
    "atomic_write",
    "format_float",
    "events_csv",
    "occupancy_csv",
    "ensemble_json",
    "rates_csv",
    "rates_json",
    "dumps",
]

SCHEMA_VERSION = 1


def format_float(x: float) -> str:
    """Shortest repr that round-trips; stable across platforms."""
    return repr(float(x))


def _pairs(values) -> list:
    flat = np.asarray(values, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in flat]


def _unpairs(data, what: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: data must be a list of [re, im] pairs") from exc
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(f"{what}: data must be a list of [re, im] pairs")
    return arr[:, 0] + 1j * arr[:, 1]


def array_to_json(a) -> dict:
    a = np.asarray(a)
    return {"dim": int(a.shape[0]), "data": _pairs(a)}


def state_from_json(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "dim" not in obj or "data" not in obj:
        raise ConfigError("state must be an object with 'dim' and 'data'")
    dim = int(obj["dim"])
    v = _unpairs(obj["data"], "state")
    if v.size != dim:
        raise ConfigError(f"state: expected {dim} entries, got {v.size}")
    return v


def matrix_from_json(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "dim" not in obj or "data" not in obj:
        raise ConfigError("matrix must be an object with 'dim' and 'data'")
    dim = int(obj["dim"])
    v = _unpairs(obj["data"], "matrix")
    if v.size != dim * dim:
        raise ConfigError(f"matrix: expected {dim * dim} entries, got {v.size}")
    return v.reshape(dim, dim)


def _label_to_json(label):
    if isinstance(label, (tuple, list, np.ndarray)):
        return [_label_to_json(x) for x in label]
    if isinstance(label, (np.integer, np.floating)):
        return label.item()
    return label


def family_to_json(family: ProjectorFamily) -> dict:
    cells = []
    for c in family.cells:
        c = np.asarray(c)
        if c.ndim == 1:
            cells.append([int(k) for k in c])
        else:
            cells.append([_pairs(c[:, r]) for r in range(c.shape[1])])
    return {
        "dim": family.dim,
        "cells": cells,
        "labels": [_label_to_json(x) for x in family.labels],
        "resolution": family.resolution,
        "exhaustive": bool(family.exhaustive),
    }


def family_from_json(obj) -> ProjectorFamily:
    if not isinstance(obj, dict) or "dim" not in obj or "cells" not in obj:
        raise ConfigError("family must be an object with 'dim' and 'cells'")
    dim = int(obj["dim"])
    raw = obj["cells"]
    labels = tuple(tuple(x) if isinstance(x, list) else x for x in obj.get("labels") or ())
    resolution = obj.get("resolution")
    if all(all(isinstance(k, int) for k in cell) for cell in raw):
        fam = ProjectorFamily.from_index_sets(dim, [np.asarray(c, dtype=np.intp) for c in raw],
                                              labels, resolution)
    else:
        bases = []
        for cell in raw:
            vecs = [_unpairs(v, "family vector") for v in cell]
            if any(v.size != dim for v in vecs):
                raise ConfigError(f"family vectors must have length {dim}")
            bases.append(np.stack(vecs, axis=1))
        fam = ProjectorFamily.from_bases(dim, bases, labels, resolution)
    declared = obj.get("exhaustive")
    if declared is not None and bool(declared) != fam.exhaustive:
        raise ConfigError(f"family declared exhaustive={declared} but projectors sum to "
                          f"{'identity' if fam.exhaustive else 'less than identity'}")
    return fam


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def load_config(path) -> dict:
    cfg = load_json(path)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("schemaVersion")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schemaVersion {version!r} (expected {SCHEMA_VERSION})")
    return cfg


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def events_csv(ens: Ensemble, include_repairs: bool = True) -> str:
    """One row per state change; repairs carry ``repair=1``."""
    keep = np.ones(ens.event_time.size, bool) if include_repairs else ~ens.event_is_repair
    rows = ((int(k), format_float(t), int(a), int(b), int(r)) for k, t, a, b, r in zip(
        ens.event_trajectory[keep], ens.event_time[keep], ens.event_from[keep],
        ens.event_to[keep], ens.event_is_repair[keep]))
    return _csv(["trajectory_id", "event_time", "from_index", "to_index", "repair"], rows)


def occupancy_csv(ens: Ensemble) -> str:
    freq = ens.frequencies()
    times = np.r_[ens.t0, ens.times]
    first = np.bincount(ens.initial_indices, minlength=ens.n_cells) / ens.n_trajectories
    freq = np.vstack([first, freq])
    rows = ((format_float(t), i, format_float(freq[k, i]))
            for k, t in enumerate(times) for i in range(ens.n_cells))
    return _csv(["time", "index", "frequency"], rows)


def ensemble_json(ens: Ensemble) -> dict:
    freq = ens.frequencies()
    first = np.bincount(ens.initial_indices, minlength=ens.n_cells) / ens.n_trajectories
    return {
        "events": {
            "trajectory_id": ens.event_trajectory.tolist(),
            "event_time": ens.event_time.tolist(),
            "from_index": ens.event_from.tolist(),
            "to_index": ens.event_to.tolist(),
            "repair": ens.event_is_repair.astype(int).tolist(),
        },
        "occupancy": {
            "time": np.r_[ens.t0, ens.times].tolist(),
            "frequency": np.vstack([first, freq]).tolist(),
        },
    }


def rates_csv(rates: RateMatrix) -> str:
    T = rates.rates
    rows = ((i, j, format_float(T[i, j])) for j in range(T.shape[1]) for i in range(T.shape[0])
            if T[i, j] > 0)
    return _csv(["to_index", "from_index", "rate"], rows)


def rates_json(rates: RateMatrix) -> dict:
    return {"rates": np.asarray(rates.rates).tolist(), "weights": np.asarray(rates.weights).tolist()}


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
