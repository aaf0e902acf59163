"""A pure state evolving under a piecewise-constant Hamiltonian schedule."""

from __future__ import annotations

import bisect
import math

import numpy as np

from .._validation import check_hermitian, check_state
from ..exceptions import ConfigError, RangeError
from ..linalg import Evolver


class QuantumSystem:
    """Initial state plus a contiguous schedule of time-independent Hamiltonians.

    ``schedule`` is a sequence of ``(start, end, H)``; the first segment must
    start at ``t0`` and each segment must start where the previous one ended.
    The final end may be ``math.inf``. Evolution inside a segment is exact.
    A time that coincides with a breakpoint belongs to the later segment.
    """

    def __init__(self, schedule, initial_state, t0: float | None = None, hbar: float = 1.0):
        if not schedule:
            raise ConfigError("schedule must contain at least one segment")
        self.hbar = float(hbar)
        if not self.hbar > 0:
            raise ConfigError("hbar must be positive")
        segs = []
        for seg in schedule:
            start, end, H = seg
            segs.append((float(start), float(end), check_hermitian(H)))
        self.t0 = segs[0][0] if t0 is None else float(t0)
        if abs(segs[0][0] - self.t0) > 0:
            raise ConfigError("schedule must start at t0")
        for (s0, e0, _), (s1, _, _) in zip(segs, segs[1:]):
            if e0 != s1:
                raise ConfigError(f"schedule is not contiguous at t={e0} / {s1}")
        for s, e, H in segs:
            if not e > s:
                raise ConfigError(f"empty or reversed segment [{s}, {e}]")
            if H.shape != segs[0][2].shape:
                raise ConfigError("all Hamiltonians must share one dimension")
        self.segments = tuple(segs)
        self.initial_state = check_state(initial_state, segs[0][2].shape[0])
        self._starts = [s for s, _, _ in segs]
        self._evolvers = []
        self._coeffs = []
        psi = self.initial_state
        for start, end, H in segs:
            ev = Evolver(H, self.hbar)
            c = ev.coefficients(psi)
            self._evolvers.append(ev)
            self._coeffs.append(c)
            if math.isfinite(end):
                psi = ev.evolve_coefficients(c, end - start)

    @classmethod
    def static(cls, H, psi0, t0: float = 0.0, hbar: float = 1.0) -> "QuantumSystem":
        return cls([(t0, math.inf, H)], psi0, t0, hbar)

    @property
    def dim(self) -> int:
        return self.initial_state.shape[0]

    @property
    def t_end(self) -> float:
        return self.segments[-1][1]

    def breakpoints(self, t_from: float, t_to: float) -> list[float]:
        """Segment boundaries strictly inside (t_from, t_to)."""
        return [s for s in self._starts[1:] if t_from < s < t_to]

    def segment_index(self, t: float, side: str = "right") -> int:
        if t < self.t0 or t > self.t_end:
            raise RangeError(f"time {t} outside the schedule [{self.t0}, {self.t_end}]")
        if side == "right":
            k = bisect.bisect_right(self._starts, t) - 1
        else:
            k = bisect.bisect_left(self._starts, t) - 1
        return min(max(k, 0), len(self.segments) - 1)

    def hamiltonian(self, t: float, side: str = "right") -> np.ndarray:
        return self.segments[self.segment_index(t, side)][2]

    def state_at(self, t: float, segment: int | None = None) -> np.ndarray:
        k = self.segment_index(t) if segment is None else segment
        return self._evolvers[k].evolve_coefficients(self._coeffs[k], t - self.segments[k][0])
