"""Monte-Carlo sampling of the microstate jump process.

Sampling runs in two phases. A shared *tape* is built first: the time axis
is cut into substeps so that every cell with non-negligible weight satisfies
(out-rate x substep) <= 0.05 (or, with ``max_jump_prob=None``, it is cut at the
base step dt only), and the midpoint rates of each substep are
stored as per-column jump tables. Trajectories then replay the tape with
their own random streams. Trajectory k draws from a Philox generator keyed by
(seed, k), so its path does not depend on how trajectories are grouped or on
how many worker threads run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, NumericalError
from ..microstates import EPS_OCC, ProjectorFamily
from .rates import RateKernel
from .system import QuantumSystem

__all__ = [
    "JumpTrajectory",
    "Ensemble",
    "sample_ensemble",
    "sample_trajectory",
    "default_workers",
    "RATE_CAP",
]

RATE_CAP = 0.05
# Cells lighter than this do not force substeps; a trajectory sitting in one
# uses clipped jump probabilities instead (probability of being there ~ weight).
SUBDIVISION_FLOOR = 1e-8
CHUNK = 2048
_BLOCK = 512


def default_workers() -> int:
    env = os.environ.get("BEABLE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"BEABLE_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError("BEABLE_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class _Step:
    t_end: float
    out_prob: np.ndarray  # per source column: total jump probability
    keys: np.ndarray      # column + cumulative probability, increasing
    rows: np.ndarray      # target cell of each key
    weights: np.ndarray   # |c_i|^2 at the substep midpoint
    record: int           # index of the probe time reached at t_end, or -1


def _jump_table(T: np.ndarray, h: float):
    P = T * h
    out = P.sum(axis=0)
    over = out > 1.0
    if np.any(over):
        P[:, over] /= out[over]
        out = np.minimum(out, 1.0)
    cols, rows = np.nonzero(P.T)
    cum = np.zeros(rows.size)
    vals = P[rows, cols]
    if rows.size:
        starts = np.r_[0, np.flatnonzero(np.diff(cols)) + 1]
        csum = np.cumsum(vals)
        offsets = np.repeat(csum[starts] - vals[starts], np.diff(np.r_[starts, rows.size]))
        cum = csum - offsets
    return out, cols + cum, rows


def _build_tape(system: QuantumSystem, kernel: RateKernel, t0: float, t1: float, dt: float,
                cap: float | None = RATE_CAP, floor: float = SUBDIVISION_FLOOR):
    n_base = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    probes = [t0 + k * dt for k in range(1, n_base)] + [t1]
    stops = sorted(set(probes) | set(system.breakpoints(t0, t1)))
    probe_index = {t: k for k, t in enumerate(probes)}
    tape = []
    t = t0
    r_prev = 0.0
    for stop in stops:
        seg = system.segment_index(t)
        prep = kernel.prepare(system.segments[seg][2])
        while t < stop:
            h = stop - t
            if cap is None:
                T, w = kernel.rates(system.state_at(t + 0.5 * h, seg), prep)
                r_mid = float(T.sum(axis=0)[w >= floor].max(initial=0.0))
                if r_mid * h > 1.0:
                    raise NumericalError(f"jump probability {r_mid * h:.3g} exceeds 1 at t={t:.6g}; "
                                         "reduce dt or use adaptive substeps")
                out, keys, rows = _jump_table(T, h)
                rec = probe_index.get(stop, -1)
                tape.append(_Step(stop, out, keys, rows, w, rec))
                t = stop
                continue
            if r_prev > 0:
                h = min(h, cap / r_prev)
            for _ in range(60):
                t_end = stop if h >= stop - t else t + h
                h = t_end - t
                T, w = kernel.rates(system.state_at(t + 0.5 * h, seg), prep)
                R = T.sum(axis=0)
                heavy = w >= floor
                r_mid = float(R[heavy].max(initial=0.0))
                if r_mid * h <= cap * (1 + 1e-12):
                    break
                h = 0.9 * cap / r_mid
            r_prev = r_mid
            out, keys, rows = _jump_table(T, h)
            rec = probe_index.get(t_end, -1) if t_end == stop else -1
            tape.append(_Step(t_end, out, keys, rows, w, rec))
            t = t_end
    w0 = kernel.weights(system.state_at(t0))
    theory = np.stack([kernel.weights(system.state_at(t)) for t in probes])
    return tape, np.asarray(probes), w0, theory


def _draw(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, weights.size - 1)


@dataclass(frozen=True, eq=False)
class JumpTrajectory:
    seed: int
    trajectory_id: int
    t0: float
    t1: float
    dt: float
    steps: int
    initial_index: int
    events: tuple  # (time, from_index, to_index), jumps only
    repairs: tuple = ()  # (time, from_index, to_index) starvation resamples
    repair_events: int = 0

    def changes(self) -> list:
        return sorted(self.events + self.repairs, key=lambda e: e[0])

    def index_at(self, t: float) -> int:
        """Occupied slot at time t (right-continuous)."""
        idx = self.initial_index
        for time, _, to in self.changes():
            if time > t:
                break
            idx = to
        return idx

    @property
    def final_index(self) -> int:
        return self.index_at(self.t1)

    def segments(self):
        """Yield (start, end, index) intervals of constant occupancy."""
        start, idx = self.t0, self.initial_index
        for time, _, to in self.changes():
            if time > start:
                yield start, time, idx
            start, idx = time, to
        if self.t1 > start:
            yield start, self.t1, idx


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Columnar record of many trajectories sampled on one tape.

    ``occupancy[k, m]`` is the slot occupied by trajectory m at ``times[k]``.
    Event arrays list every state change; ``event_is_repair`` marks the
    starvation resamples among them.
    """

    seed: int
    t0: float
    t1: float
    dt: float
    n_cells: int
    steps: int
    times: np.ndarray
    initial_indices: np.ndarray
    occupancy: np.ndarray
    event_trajectory: np.ndarray
    event_time: np.ndarray
    event_from: np.ndarray
    event_to: np.ndarray
    event_is_repair: np.ndarray
    repair_counts: np.ndarray
    theory_weights: np.ndarray = field(default=None)

    @property
    def n_trajectories(self) -> int:
        return self.initial_indices.size

    @property
    def final_indices(self) -> np.ndarray:
        return self.occupancy[-1]

    def frequencies(self) -> np.ndarray:
        """Empirical occupancy frequencies, shape (len(times), n_cells)."""
        out = np.zeros((self.times.size, self.n_cells))
        for k in range(self.times.size):
            out[k] = np.bincount(self.occupancy[k], minlength=self.n_cells) / self.n_trajectories
        return out

    @property
    def repair_fraction(self) -> float:
        return float(self.repair_counts.sum()) / max(1, self.steps * self.n_trajectories)

    def trajectory(self, k: int) -> JumpTrajectory:
        sel = self.event_trajectory == k
        rows = list(zip(self.event_time[sel].tolist(), self.event_from[sel].tolist(),
                        self.event_to[sel].tolist(), self.event_is_repair[sel].tolist()))
        jumps = tuple((t, a, b) for t, a, b, r in rows if not r)
        repairs = tuple((t, a, b) for t, a, b, r in rows if r)
        return JumpTrajectory(self.seed, k, self.t0, self.t1, self.dt, self.steps,
                              int(self.initial_indices[k]), jumps, repairs, int(self.repair_counts[k]))


def _stream(seed: int, trajectory_id: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, trajectory_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_chunk(tape, w0, ids, seed, initial_index, eps_occ, n_probes, audit):
    m = ids.size
    gens = [_stream(seed, int(k)) for k in ids]
    first = np.array([g.random() for g in gens])
    if initial_index is None:
        state = _draw(w0, first)
    else:
        state = np.full(m, int(initial_index), dtype=np.intp)
    start = state.copy()
    occ = np.empty((n_probes, m), dtype=np.int32)
    repairs = np.zeros(m, dtype=np.int64)
    ev_traj, ev_time, ev_from, ev_to, ev_rep = [], [], [], [], []
    local = np.arange(m)
    U = None
    for s, step in enumerate(tape):
        b = s % _BLOCK
        if b == 0:
            n = min(_BLOCK, len(tape) - s)
            U = np.stack([g.random((n, 2)) for g in gens], axis=1)
        u = U[b]
        starving = step.weights[state] < eps_occ
        if starving.any():
            new = _draw(step.weights, u[starving, 1])
            sel = local[starving]
            ev_traj.append(ids[sel]); ev_time.append(np.full(sel.size, step.t_end))
            ev_from.append(state[sel].copy()); ev_to.append(new); ev_rep.append(np.ones(sel.size, bool))
            state[sel] = new
            repairs[sel] += 1
        jump = u[:, 0] < step.out_prob[state]
        if jump.any():
            sel = local[jump]
            pos = np.searchsorted(step.keys, state[sel] + u[sel, 0], side="right")
            target = step.rows[pos]
            if audit:
                cols = np.floor(step.keys[pos]).astype(np.intp)
                if np.any(cols != state[sel]) or np.any(target == state[sel]):
                    raise AssertionError("jump drawn outside the source column")
            ev_traj.append(ids[sel]); ev_time.append(np.full(sel.size, step.t_end))
            ev_from.append(state[sel].copy()); ev_to.append(target); ev_rep.append(np.zeros(sel.size, bool))
            state[sel] = target
        if step.record >= 0:
            occ[step.record] = state
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    tr = cat(ev_traj, np.int64)
    order = np.argsort(tr, kind="stable")
    return (start, occ, repairs, tr[order], cat(ev_time, float)[order], cat(ev_from, np.int64)[order],
            cat(ev_to, np.int64)[order], cat(ev_rep, bool)[order])


def sample_ensemble(system: QuantumSystem, family: ProjectorFamily, t0: float, t1: float, dt: float,
                    seed: int, n_trajectories: int, initial_index: int | None = None,
                    eps_occ: float = EPS_OCC, n_workers: int | None = None,
                    first_id: int = 0, audit: bool = False,
                    max_jump_prob: float | None = RATE_CAP) -> Ensemble:
    """Sample ``n_trajectories`` jump paths on [t0, t1] with base step ``dt``.

    Trajectories start in ``initial_index`` when given, otherwise in a slot
    drawn from |c_i(t0)|^2. At each substep a trajectory in slot j jumps to i
    with probability T_ij * h (midpoint rates). If the occupied cell's weight
    drops below ``eps_occ`` the slot is redrawn from the current weights and
    the repair is counted.

    Substeps keep (out-rate x substep) <= ``max_jump_prob`` for every cell
    heavier than 1e-8. ``max_jump_prob=None`` instead uses exactly one step
    per dt (a discrete-time chain) and raises NumericalError when a jump
    probability would exceed 1.
    """
    if max_jump_prob is not None and not 0 < max_jump_prob <= 1:
        raise ConfigError("max_jump_prob must lie in (0, 1]")
    if not t1 > t0 or not dt > 0:
        raise ConfigError("need t1 > t0 and dt > 0")
    if n_trajectories < 1:
        raise ConfigError("need at least one trajectory")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    kernel = RateKernel(family, system.hbar, eps_occ)
    tape, probes, w0, theory = _build_tape(system, kernel, float(t0), float(t1), float(dt),
                                            max_jump_prob)
    ids = np.arange(first_id, first_id + n_trajectories, dtype=np.int64)
    chunks = [ids[i:i + CHUNK] for i in range(0, ids.size, CHUNK)]
    workers = default_workers() if n_workers is None else int(n_workers)
    job = lambda c: _run_chunk(tape, w0, c, int(seed), initial_index, eps_occ, probes.size, audit)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    start = np.concatenate([p[0] for p in parts])
    occ = np.concatenate([p[1] for p in parts], axis=1)
    return Ensemble(
        seed=int(seed), t0=float(t0), t1=float(t1), dt=float(dt), n_cells=family.n_cells,
        steps=len(tape), times=probes, initial_indices=start, occupancy=occ,
        event_trajectory=np.concatenate([p[3] for p in parts]) - first_id,
        event_time=np.concatenate([p[4] for p in parts]),
        event_from=np.concatenate([p[5] for p in parts]),
        event_to=np.concatenate([p[6] for p in parts]),
        event_is_repair=np.concatenate([p[7] for p in parts]),
        repair_counts=np.concatenate([p[2] for p in parts]),
        theory_weights=theory,
    )


def sample_trajectory(system: QuantumSystem, family: ProjectorFamily, t0: float, t1: float,
                      dt: float, seed: int, initial_index: int | None = None,
                      trajectory_id: int = 0, eps_occ: float = EPS_OCC) -> JumpTrajectory:
    """Single jump path; identical to trajectory ``trajectory_id`` of an ensemble with the same seed."""
    ens = sample_ensemble(system, family, t0, t1, dt, seed, 1, initial_index, eps_occ,
                          n_workers=1, first_id=trajectory_id)
    traj = ens.trajectory(0)
    return JumpTrajectory(traj.seed, trajectory_id, traj.t0, traj.t1, traj.dt, traj.steps,
                          traj.initial_index, traj.events, traj.repairs, traj.repair_events)
