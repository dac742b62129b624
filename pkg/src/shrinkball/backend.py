"""Backend selection.

The compiled kernel is used when it imports and the model carries a
``KernelSpec``; everything else runs on the numpy fallback.  Setting the
environment variable ``SHRINKBALL_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback
from .batch import CoupledBatch, ExitBatch

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

AVAILABLE = ("compiled", "python") if _kernels is not None else ("python",)
DEFAULT = "python" if os.environ.get("SHRINKBALL_BACKEND", "").lower() == "python" else AVAILABLE[0]


def resolve(backend=None, model=None):
    """Name of the backend that will actually run ``model``."""
    name = DEFAULT if backend is None else backend
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and (_kernels is None or (model is not None and model.kernel is None)):
        return "python"
    return name


def exit_batch(model, center, radius, h, method, seed, paths, max_steps,
               refine=100, retain=False, backend=None):
    paths = np.asarray(paths, dtype=np.int64)
    if resolve(backend, model) == "python":
        return _fallback.exit_batch(model, center, radius, h, method, seed, paths,
                                    max_steps, refine=refine, retain=retain)
    ks = model.kernel
    t, s, steps, to, off, st, inc = _kernels.exit_batch(
        ks.kind, ks.kappa, ks.sigma, model.sigma_max, model.initial, center,
        float(radius), float(h), int(method), int(seed), paths, int(max_steps),
        int(refine), bool(retain))
    return ExitBatch(paths, t, s, steps, to, h, off, st, inc)


def grid_batch(model, n_steps, h, seed, paths, backend=None):
    paths = np.asarray(paths, dtype=np.int64)
    if resolve(backend, model) == "python":
        return _fallback.grid_batch(model, n_steps, h, seed, paths)
    ks = model.kernel
    return _kernels.grid_batch(ks.kind, ks.kappa, ks.sigma, model.initial,
                               int(n_steps), float(h), int(seed), paths)


def coupled_batch(model, center, radius, h_fine, factors, seed, paths, max_steps,
                  backend=None):
    paths = np.asarray(paths, dtype=np.int64)
    factors = np.asarray(factors, dtype=np.int64)
    if resolve(backend, model) == "python":
        return _fallback.coupled_batch(model, center, radius, h_fine, factors, seed,
                                       paths, max_steps)
    ks = model.kernel
    c = float(np.asarray(center, dtype=float).reshape(-1)[0])
    naive, corr, to = _kernels.coupled_batch(ks.kind, ks.kappa, ks.sigma, model.initial,
                                             c, float(radius), float(h_fine), factors,
                                             int(seed), paths, int(max_steps))
    return CoupledBatch(paths, factors, h_fine, naive, corr, to)
