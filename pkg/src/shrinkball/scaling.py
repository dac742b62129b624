"""Scaled processes built from simulated exits.

For a path stopped at its first exit from the ball of radius ``n^{-1/2}``
around ``x`` this module evaluates

* ``Y^n_t = n^{1/2} (f(X_{tau ^ t}) - f(x))`` on a time grid,
* the time-scaled path ``Z^n_s = n^{1/2} (X_{s/n} - x)``,
* the Taylor remainder ``n^{1/2} [f(X) - f(x) - J_f(x)(X - x)]`` in sup norm,
* the discrete Ito sum ``n^{1/2} sum_s grad f_k(X_s) sigma(X_s) dW_s``.

Every quantity has a single-record form taking an :class:`ExitRecord` and
a batch form taking a retained :class:`ExitBatch`; the two agree.
Between grid points the path takes its value at the previous grid point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .batch import ExitBatch
from .errors import ConfigError, DomainError
from .exits import ExitRecord
from .models import Observable, PathGrid, SdeModel, probe_points

__all__ = [
    "ScaledFddSample",
    "RemainderSample",
    "check_radius",
    "scaled_stopped_values",
    "time_scaled_path",
    "unit_ball_exit",
    "scaling_identity_holds",
    "remainder_sup",
    "truncated_martingale",
    "stopped_states",
    "scaled_values_batch",
    "remainder_sup_batch",
    "scaled_sup_batch",
    "truncated_martingale_batch",
    "integrand_scale",
]

RADIUS_RTOL = 1e-12


@dataclass
class ScaledFddSample:
    n: int
    times: np.ndarray
    values: np.ndarray          # (m, l)
    exit_value: np.ndarray      # (l,)
    exit_time_scaled: float


@dataclass
class RemainderSample:
    n: int
    sup_norm: float
    horizon: float


def check_radius(n, radius):
    """Raise ``ConfigError`` unless ``radius == n^{-1/2}``."""
    if int(n) != n or n < 1:
        raise ConfigError(f"scaling index must be a positive integer, got {n}", field="n")
    want = 1.0 / math.sqrt(n)
    if abs(radius - want) > RADIUS_RTOL * want:
        raise ConfigError(f"exit radius {radius} does not match n^(-1/2) = {want} for n = {n}",
                          field="n")


def _times(times):
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1 or np.any(t < 0) or np.any(np.diff(t) < 0):
        raise DomainError("times must be non-negative and sorted")
    return t


def _row(v):
    return np.asarray(v, dtype=float).reshape(-1)


# -- single record -----------------------------------------------------------

def _record_states(exit: ExitRecord, times):
    grid = exit.pre_exit_grid
    out = np.empty((len(times), grid.dimension))
    stopped = times >= exit.exit_time
    out[stopped] = exit.exit_state
    if np.any(~stopped):
        out[~stopped] = grid.value_at(times[~stopped])
    return out


def scaled_stopped_values(n, observable: Observable, exit: ExitRecord, model: SdeModel, times):
    """``Y^n`` of one stopped path on ``times`` and at its exit time."""
    check_radius(n, exit.radius)
    t = _times(times)
    fx = _row(observable(model.initial))
    root = math.sqrt(n)
    states = _record_states(exit, t)
    values = root * (np.asarray(observable(states)).reshape(len(t), -1) - fx)
    exit_value = root * (_row(observable(exit.exit_state)) - fx)
    return ScaledFddSample(int(n), t, values, exit_value, n * exit.exit_time)


def time_scaled_path(n, path: PathGrid, x):
    """``Z^n``: times multiplied by ``n``, states mapped to ``n^{1/2}(y - x)``."""
    x = _row(x)
    if x.size != path.dimension:
        raise DomainError(f"base point has {x.size} coordinates, path has {path.dimension}")
    root = math.sqrt(n)
    inc = None if path.increments is None else root * path.increments
    step = None if path.step is None else n * path.step
    return PathGrid(path.times * n, root * (path.states - x), inc, step=step)


def unit_ball_exit(path: PathGrid):
    """Index and time of the first grid point with norm ``>= 1``, or ``None``."""
    hit = np.flatnonzero(np.linalg.norm(path.states, axis=1) >= 1.0)
    if len(hit) == 0:
        return None
    j = int(hit[0])
    return j, float(path.times[j])


def scaling_identity_holds(n, exit: ExitRecord):
    """Check ``n * tau^n`` against the unit-ball exit of ``Z^n`` on the same grid.

    All ``Z^n`` states before the crossing interval must lie strictly inside
    the unit ball and ``n * tau^n`` must fall in the scaled crossing
    interval.  When the grid itself leaves the ball (always the case for
    naive detection) the first outside point of ``Z^n`` must close that
    interval, and for naive detection its time must equal ``n * tau^n``.
    """
    z = time_scaled_path(n, exit.pre_exit_grid, exit.center)
    first = unit_ball_exit(z)
    k = len(z) - 1
    scaled = n * exit.exit_time
    if first is not None and first[0] != k:
        return False
    lo, hi = (z.times[-2], z.times[-1]) if k > 0 else (0.0, 0.0)
    if not lo <= scaled <= hi:
        return False
    if exit.method == "naive":
        return first is not None and first[1] == scaled
    return True


def _remainder(observable, states, x, fx, jx, root):
    if observable.linear:
        return np.zeros((len(states), len(fx)))
    fs = np.asarray(observable(states)).reshape(len(states), -1)
    return root * ((fs - fx) - (states - x) @ jx.T)


def remainder_sup(n, observable: Observable, exit: ExitRecord, model: SdeModel, horizon):
    """Sup over grid times ``<= horizon`` (and the exit point) of the Taylor remainder."""
    check_radius(n, exit.radius)
    if horizon < 0:
        raise DomainError("horizon must be non-negative")
    x = model.initial
    fx = _row(observable(x))
    jx = np.asarray(observable.jacobian(x)).reshape(len(fx), -1)
    grid = exit.pre_exit_grid
    keep = grid.times[:-1] <= horizon
    pts = [grid.states[:-1][keep]]
    if exit.exit_time <= horizon:
        pts.append(exit.exit_state[None, :])
    states = np.concatenate(pts)
    if len(states) == 0:
        return RemainderSample(int(n), 0.0, float(horizon))
    rem = _remainder(observable, states, x, fx, jx, math.sqrt(n))
    return RemainderSample(int(n), float(np.max(np.linalg.norm(rem, axis=1))), float(horizon))


def _integrand(observable, model, states, increments, k):
    grad = np.asarray(observable.jacobian(states))[:, k, :]
    sig = np.asarray(model.diffusion(states))
    return np.einsum("ni,nij,nj->n", grad, sig, increments)


def truncated_martingale(n, k, observable: Observable, exit: ExitRecord, model: SdeModel, a,
                         increments=None):
    """``F^{n,k}_a``: the discrete Ito sum over grid times ``s < min(tau^n, a)``.

    ``increments`` defaults to the driving increments stored on the
    record's grid; for ``a >= tau^n`` the value no longer depends on ``a``.
    """
    if a < 0:
        raise DomainError("truncation horizon must be non-negative")
    grid = exit.pre_exit_grid
    inc = grid.increments if increments is None else np.asarray(increments, dtype=float)
    if inc is None:
        raise ConfigError("the driving increments of this path were not retained",
                          field="increments")
    inc = inc.reshape(-1, grid.dimension)
    starts = grid.times[:-1]
    keep = (starts < exit.exit_time) & (starts < a)
    if not np.any(keep):
        return 0.0
    vals = _integrand(observable, model, grid.states[:-1][keep], inc[keep], k)
    return float(math.sqrt(n) * np.sum(vals))


# -- batches -----------------------------------------------------------------

def _need_grids(batch: ExitBatch):
    if not batch.retained:
        raise ConfigError("exit batch was simulated without retained grids", field="retain")


def _prev_index(t, h):
    """Largest ``j`` with ``j * h <= t`` (grid times are ``j * h``)."""
    j = np.floor(t / h).astype(np.int64)
    j = np.where((j + 1) * h <= t, j + 1, j)
    return np.where(j * h > t, j - 1, j)


def stopped_states(batch: ExitBatch, times):
    """``X_{tau ^ t}`` for every path and time, shape ``(N, m, d)``."""
    _need_grids(batch)
    t = _times(times)
    stopped = t[None, :] >= batch.exit_time[:, None]
    j = np.minimum(_prev_index(t, batch.h)[None, :], batch.steps[:, None])
    rows = batch.offsets[:-1, None] + j
    out = batch.states[rows]
    out[stopped] = np.broadcast_to(batch.exit_state[:, None, :], out.shape)[stopped]
    return out


def scaled_values_batch(n, observable: Observable, batch: ExitBatch, x, times):
    """``(values (N, m, l), exit_values (N, l), n * tau (N,))``."""
    x = _row(x)
    fx = _row(observable(x))
    root = math.sqrt(n)
    states = stopped_states(batch, times)
    nb, m, d = states.shape
    vals = root * (np.asarray(observable(states.reshape(-1, d))).reshape(nb, m, -1) - fx)
    exit_vals = root * (np.asarray(observable(batch.exit_state)).reshape(nb, -1) - fx)
    return vals, exit_vals, n * batch.exit_time


def _interval_rows(batch):
    """Mask selecting states that open an interval (all but each path's last row)."""
    sel = np.ones(len(batch.states), dtype=bool)
    sel[batch.offsets[1:] - 1] = False
    return sel


def _row_times(batch, sel):
    owner = np.repeat(np.arange(len(batch)), np.diff(batch.offsets))
    j = np.arange(len(batch.states)) - batch.offsets[owner]
    return owner[sel], (j * batch.h)[sel]


def _segment_reduce(ufunc, values, owner, count, fill):
    out = np.full(count, fill)
    ufunc.at(out, owner, values)
    return out


def _sup_batch(batch, horizon, norm_of):
    """Per-path max of ``norm_of(states)`` over grid times ``<= horizon`` and the exit point."""
    sel = _interval_rows(batch)
    owner, times = _row_times(batch, sel)
    keep = times <= horizon
    out = _segment_reduce(np.maximum, norm_of(batch.states[sel][keep]), owner[keep],
                          len(batch), 0.0)
    at_exit = batch.exit_time <= horizon
    if np.any(at_exit):
        out[at_exit] = np.maximum(out[at_exit], norm_of(batch.exit_state[at_exit]))
    return out


def remainder_sup_batch(n, observable: Observable, model: SdeModel, batch: ExitBatch, horizon):
    """Per-path remainder sup norms up to ``horizon``."""
    _need_grids(batch)
    x = model.initial
    fx = _row(observable(x))
    jx = np.asarray(observable.jacobian(x)).reshape(len(fx), -1)
    root = math.sqrt(n)
    return _sup_batch(batch, horizon, lambda st: np.linalg.norm(
        _remainder(observable, st, x, fx, jx, root), axis=1))


def scaled_sup_batch(n, observable: Observable, model: SdeModel, batch: ExitBatch, delta):
    """Per-path ``sup_{t <= delta} ||Y^n_t - Y^n_0||`` of the stopped scaled process."""
    _need_grids(batch)
    fx = _row(observable(model.initial))
    root = math.sqrt(n)

    def norm_of(st):
        y = root * (np.asarray(observable(st)).reshape(len(st), -1) - fx)
        return np.linalg.norm(y, axis=1)

    return _sup_batch(batch, delta, norm_of)


def truncated_martingale_batch(n, k, observable: Observable, model: SdeModel, batch: ExitBatch,
                               horizons):
    """``F^{n,k}_a`` for every path and every ``a`` in ``horizons``, shape ``(N, len(a))``.

    A horizon of ``inf`` gives the terminal value ``V^{n,k}``.
    """
    _need_grids(batch)
    if batch.increments is None:
        raise ConfigError("the driving increments were not retained", field="increments")
    sel = _interval_rows(batch)
    owner, times = _row_times(batch, sel)
    vals = math.sqrt(n) * _integrand(observable, model, batch.states[sel], batch.increments, k)
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    out = np.empty((len(batch), len(horizons)))
    for c, a in enumerate(horizons):
        keep = times < a
        out[:, c] = _segment_reduce(np.add, vals[keep], owner[keep], len(batch), 0.0)
    return out


def integrand_scale(observable: Observable, model: SdeModel, radius, count=256):
    """Largest operator norm of ``J_f sigma`` over probe points of the ``radius`` ball."""
    pts = probe_points(model.initial, radius, count)
    prod = np.asarray(observable.jacobian(pts)) @ np.asarray(model.diffusion(pts))
    return float(np.max(np.linalg.norm(prod, ord=2, axis=(-2, -1))))
