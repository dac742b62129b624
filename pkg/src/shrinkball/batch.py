"""Array containers returned by the simulation backends."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

NAIVE, BRIDGE, SUBSTEP = 0, 1, 2
METHOD_CODES = {"naive": NAIVE, "bridge_corrected": BRIDGE, "substepped": SUBSTEP}
METHOD_NAMES = {v: k for k, v in METHOD_CODES.items()}


@dataclass
class ExitBatch:
    """Exit data for a batch of paths, indexed like ``paths``.

    ``steps[i]`` is the number of coarse grid intervals up to and including
    the one in which the exit was declared.  When grids are retained, path
    ``i`` owns rows ``offsets[i]:offsets[i+1]`` of ``states`` (``steps + 1``
    rows, the last one being the raw state closing the crossing interval)
    and rows ``offsets[i] - i : offsets[i+1] - i - 1`` of ``increments``.
    """

    paths: np.ndarray
    exit_time: np.ndarray
    exit_state: np.ndarray
    steps: np.ndarray
    timed_out: np.ndarray
    h: float
    offsets: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    increments: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.paths)

    @property
    def retained(self):
        return self.offsets is not None

    def grid(self, i):
        """``(times, states, increments)`` of path ``i``'s retained grid."""
        lo, hi = self.offsets[i], self.offsets[i + 1]
        states = self.states[lo:hi]
        inc = self.increments[lo - i:hi - i - 1]
        times = np.arange(hi - lo) * self.h
        return times, states, inc


@dataclass
class CoupledBatch:
    """Naive and bridge-corrected exit times of coupled coarse tracks.

    Column ``j`` belongs to step ``h_fine * factors[j]``.
    """

    paths: np.ndarray
    factors: np.ndarray
    h_fine: float
    naive: np.ndarray
    corrected: np.ndarray
    timed_out: np.ndarray
