"""First exit of a sampled path from a ball.

Three detection rules are supported:

``naive``
    first grid point at distance ``>= r``; the exit state is the radial
    projection of that point onto the sphere.
``bridge_corrected`` (d = 1)
    naive detection plus, for each interval that stays inside, a coin
    flipped with the Brownian-bridge crossing probability of either
    barrier; a firing coin places the exit at the interval midpoint.
``substepped`` (any d)
    an interval starting within ``3 sigma_max sqrt(h)`` of the sphere (or
    ending outside it) is re-integrated with ``refine`` Euler substeps
    whose increments are fresh draws conditioned to sum to the coarse
    increment; the exit state is the linear interpolation to the sphere
    on the fine grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _fallback
from .batch import BRIDGE, METHOD_CODES, METHOD_NAMES, NAIVE, SUBSTEP
from .errors import ConfigError, DomainError
from .models import PathGrid
from .rng import SUB_BRIDGE, StreamKey, uniforms

__all__ = [
    "ExitRecord",
    "METHODS",
    "bridge_crossing_probability",
    "detect_exit",
    "method_code",
    "records_from_batch",
]

METHODS = tuple(METHOD_CODES)
SPHERE_TOL = 1e-9


def method_code(method, dimension=None):
    if isinstance(method, (int, np.integer)):
        code = int(method)
        if code not in METHOD_NAMES:
            raise ConfigError(f"unknown detection method {method!r}", field="method")
    else:
        try:
            code = METHOD_CODES[method]
        except KeyError:
            raise ConfigError(f"unknown detection method {method!r}", field="method") from None
    if code == BRIDGE and dimension is not None and dimension != 1:
        raise ConfigError("bridge_corrected detection is only exact for d = 1; "
                          "use substepped", field="method")
    return code


@dataclass(eq=False)
class ExitRecord:
    """One path's first exit from the ball of ``radius`` around ``center``.

    ``pre_exit_grid`` is the coarse grid truncated at the end of the
    interval in which the exit was declared, so its last state may lie
    outside the ball and every earlier state lies strictly inside.
    """

    exit_time: float
    exit_state: np.ndarray
    pre_exit_grid: PathGrid
    radius: float
    method: str
    center: np.ndarray
    path_index: Optional[int] = None

    @property
    def interval(self):
        t = self.pre_exit_grid.times
        return (t[-2], t[-1]) if len(t) > 1 else (t[0], t[0])

    def check(self, tol=SPHERE_TOL):
        """Raise ``AssertionError`` if a record invariant fails."""
        gap = abs(np.linalg.norm(self.exit_state - self.center) - self.radius)
        assert gap <= tol * self.radius, f"exit state off the sphere by {gap}"
        lo, hi = self.interval
        assert lo <= self.exit_time <= hi, "exit time outside the crossing interval"
        inner = np.linalg.norm(self.pre_exit_grid.states[:-1] - self.center, axis=1)
        assert np.all(inner < self.radius), "pre-exit state outside the ball"


def bridge_crossing_probability(a, b, level, dt, diffusion_scale):
    """Probability that a Brownian bridge from ``a`` to ``b`` over ``dt`` touches ``level``.

    One-sided upper barrier: requires ``a <= level`` and ``b <= level``.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if not diffusion_scale > 0:
        raise DomainError(f"diffusion_scale must be positive, got {diffusion_scale}")
    if a > level or b > level:
        raise DomainError("both endpoints must lie at or below the barrier")
    return math.exp(-2.0 * (level - a) * (level - b) / (diffusion_scale ** 2 * dt))


def _project(center, y, r):
    rel = y - center
    return center + r * rel / np.sqrt(np.sum(rel * rel))


def _truncate(path, k):
    inc = None if path.increments is None else path.increments[:k]
    return PathGrid(path.times[:k + 1], path.states[:k + 1], inc, step=path.step)


def detect_exit(path: PathGrid, center, radius, method, key: StreamKey, model,
                refine=100):
    """First exit of ``path`` from the open ball; ``None`` if it never leaves.

    ``key`` addresses the path's streams (coins and refinement draws);
    ``model`` supplies the diffusion used by the bridge and substep rules.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    r = float(radius)
    if not r > 0:
        raise DomainError("radius must be positive")
    code = method_code(method, path.dimension)
    name = METHOD_NAMES[code]
    states = path.states
    dist = np.linalg.norm(states - center, axis=1)
    if dist[0] >= r:
        raise DomainError("path must start inside the open ball")
    if code == SUBSTEP and path.increments is None:
        raise ConfigError("substepped detection needs the driving increments", field="method")

    seed, pidx = key.master_seed, key.path_index
    for j in range(len(path) - 1):
        t0, t1 = path.times[j], path.times[j + 1]
        h = path.step if path.step is not None else t1 - t0
        if code == SUBSTEP:
            band = r - 3.0 * model.sigma_max * math.sqrt(h)
            if dist[j] > band or dist[j + 1] >= r:
                found, t_off, st = _fallback._refine(
                    model, states[j:j + 1], path.increments[j:j + 1], h, refine,
                    seed, np.array([pidx]), j, center, r)
                if found[0]:
                    return ExitRecord(t0 + t_off[0], st[0], _truncate(path, j + 1), r, name,
                                      center, pidx)
        if dist[j + 1] >= r:
            return ExitRecord(t1, _project(center, states[j + 1], r), _truncate(path, j + 1),
                              r, name, center, pidx)
        if code == BRIDGE:
            s = float(np.asarray(model.diffusion(states[j]))[0, 0])
            a = states[j, 0] - center[0]
            b = states[j + 1, 0] - center[0]
            if s != 0.0:
                p_up = bridge_crossing_probability(a, b, r, h, abs(s))
                p_lo = bridge_crossing_probability(-a, -b, r, h, abs(s))
            else:
                p_up = p_lo = 0.0
            u = uniforms(seed, [pidx], SUB_BRIDGE, j, 1)[0, 0]
            if u < p_up + (1.0 - p_up) * p_lo:
                side = r if u < p_up else -r
                return ExitRecord(0.5 * (t0 + t1), center + np.array([side]),
                                  _truncate(path, j + 1), r, name, center, pidx)
    return None


def records_from_batch(batch, center, radius, method):
    """Per-path :class:`ExitRecord` objects from a retained :class:`ExitBatch`."""
    if not batch.retained:
        raise ConfigError("exit batch was simulated without retained grids")
    center = np.asarray(center, dtype=float).reshape(-1)
    name = METHOD_NAMES[method_code(method)]
    out = []
    for i in range(len(batch)):
        times, states, inc = batch.grid(i)
        grid = PathGrid(times, states, inc, step=batch.h)
        out.append(ExitRecord(float(batch.exit_time[i]), batch.exit_state[i], grid,
                              float(radius), name, center, int(batch.paths[i])))
    return out
