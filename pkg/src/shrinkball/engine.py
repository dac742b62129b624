"""Euler-Maruyama simulation on fixed grids and until first exit."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import backend as _backend
from .batch import CoupledBatch, ExitBatch
from .errors import DomainError, ExitTimeoutError, NumericError
from .exits import method_code, records_from_batch
from .models import PathGrid, SdeModel
from .rng import StreamKey

__all__ = [
    "euler_step",
    "simulate_on_grid",
    "simulate_until_exit",
    "simulate_exits",
    "simulate_grids",
    "simulate_coupled",
    "default_method",
    "default_max_time",
    "step_for_radius",
]

CHUNK = 2048


def default_method(dimension):
    return "bridge_corrected" if dimension == 1 else "substepped"


def default_max_time(radius):
    return 1e4 * radius * radius


def step_for_radius(h0, radius):
    """Diffusive step policy ``h = h0 * r^2``."""
    return h0 * radius * radius


def euler_step(model: SdeModel, state, dt, dw):
    """``state + mu(state) dt + sigma(state) dw``."""
    state = np.asarray(state, dtype=float)
    dw = np.asarray(dw, dtype=float)
    d = model.dimension
    if state.shape != (d,) or dw.shape != (d,):
        raise DomainError(f"state and dW must have length {d}")
    if dt < 0:
        raise DomainError("dt must be non-negative")
    with np.errstate(over="ignore", invalid="ignore"):
        out = state + np.asarray(model.drift(state)) * dt + np.asarray(model.diffusion(state)) @ dw
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite Euler step from state {state}", state=state.copy())
    return out


def _chunks(n, size=CHUNK):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _pmap(fn, pieces, workers):
    if workers is None or workers <= 1 or len(pieces) <= 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, pieces))


def _concat_exit(parts, h):
    paths = np.concatenate([p.paths for p in parts])
    out = ExitBatch(paths,
                    np.concatenate([p.exit_time for p in parts]),
                    np.concatenate([p.exit_state for p in parts]),
                    np.concatenate([p.steps for p in parts]),
                    np.concatenate([p.timed_out for p in parts]), h)
    if parts[0].retained:
        offs, base = [np.zeros(1, dtype=np.int64)], 0
        for p in parts:
            offs.append(p.offsets[1:] + base)
            base += p.offsets[-1]
        out.offsets = np.concatenate(offs)
        out.states = np.concatenate([p.states for p in parts])
        out.increments = np.concatenate([p.increments for p in parts])
    return out


def simulate_exits(model, center, radius, h, method, seed, paths, max_time=None,
                   refine=100, retain=False, workers=1, backend=None, n=None):
    """Exit data for many paths; rows follow the order of ``paths``.

    Paths are cut into fixed-size chunks that may run on ``workers``
    threads; the chunking never depends on the worker count.
    """
    paths = np.asarray(paths, dtype=np.int64)
    if not radius > 0 or not h > 0:
        raise DomainError("radius and step must be positive")
    code = method_code(method, model.dimension)
    max_time = default_max_time(radius) if max_time is None else max_time
    max_steps = int(math.ceil(max_time / h))

    def run(span):
        lo, hi = span
        return _backend.exit_batch(model, center, radius, h, code, seed, paths[lo:hi],
                                   max_steps, refine=refine, retain=retain, backend=backend)

    parts = _pmap(run, _chunks(len(paths)), workers)
    if not parts:
        return _backend.exit_batch(model, center, radius, h, code, seed, paths, max_steps,
                                   refine=refine, retain=retain, backend=backend)
    batch = _concat_exit(parts, h)
    if batch.timed_out.any():
        k = int(np.flatnonzero(batch.timed_out)[0])
        raise ExitTimeoutError(
            f"path {int(paths[k])} did not exit within max_time={max_time} (n={n})",
            path_index=int(paths[k]), n=n)
    return batch


def simulate_grids(model, horizon, h, seed, paths, workers=1, backend=None):
    """States ``(N, m+1, d)`` and increments ``(N, m, d)`` on ``0, h, ..., m h``."""
    if not h > 0 or h > horizon:
        raise DomainError("need 0 < h <= horizon")
    n_steps = int(math.ceil(horizon / h - 1e-9))
    paths = np.asarray(paths, dtype=np.int64)

    def run(span):
        lo, hi = span
        return _backend.grid_batch(model, n_steps, h, seed, paths[lo:hi], backend=backend)

    parts = _pmap(run, _chunks(len(paths)), workers)
    if not parts:
        return _backend.grid_batch(model, n_steps, h, seed, paths, backend=backend)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def simulate_on_grid(model: SdeModel, horizon, h, key: StreamKey, backend=None):
    """One Euler path on the uniform grid of spacing ``h`` covering ``[0, horizon]``."""
    states, inc = simulate_grids(model, horizon, h, key.master_seed, [key.path_index],
                                 backend=backend)
    times = np.arange(states.shape[1]) * h
    return PathGrid(times, states[0], inc[0], step=h)


def simulate_until_exit(model: SdeModel, center, radius, h, key: StreamKey, max_time=None,
                        method=None, refine=100, backend=None):
    """Step one path until it leaves the ball; returns an :class:`ExitRecord`."""
    method = default_method(model.dimension) if method is None else method
    batch = simulate_exits(model, center, radius, h, method, key.master_seed,
                           [key.path_index], max_time=max_time, refine=refine,
                           retain=True, backend=backend)
    return records_from_batch(batch, center, radius, method)[0]


def simulate_coupled(model, center, radius, h_fine, factors, seed, paths, max_time=None,
                     workers=1, backend=None):
    """Exit times of coarse tracks ``h_fine * factors`` driven by one fine path each (d = 1)."""
    if model.dimension != 1:
        raise DomainError("coupled coarse tracks are implemented for d = 1")
    if not radius > 0 or not h_fine > 0:
        raise DomainError("radius and step must be positive")
    factors = np.asarray(factors, dtype=np.int64)
    if np.any(factors < 1):
        raise DomainError("coarsening factors must be positive integers")
    paths = np.asarray(paths, dtype=np.int64)
    max_time = default_max_time(radius) if max_time is None else max_time
    max_steps = int(math.ceil(max_time / h_fine))

    def run(span):
        lo, hi = span
        return _backend.coupled_batch(model, center, radius, h_fine, factors, seed,
                                      paths[lo:hi], max_steps, backend=backend)

    parts = _pmap(run, _chunks(len(paths)), workers) or [run((0, 0))]
    out = CoupledBatch(paths, factors, h_fine,
                       np.concatenate([p.naive for p in parts]),
                       np.concatenate([p.corrected for p in parts]),
                       np.concatenate([p.timed_out for p in parts]))
    if out.timed_out.any():
        k = int(np.flatnonzero(out.timed_out)[0])
        raise ExitTimeoutError(f"path {int(paths[k])} did not exit within max_time={max_time}",
                               path_index=int(paths[k]))
    return out
