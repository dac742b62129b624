"""Reference samples for the limit laws.

Three families are provided: exits of ``Sigma W`` from the unit ball
(simulated at a fine step), uniform points on the unit sphere, and fair
signs.  Every family draws from its own derived seed so references never
share random numbers with the experiment paths they are compared with.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import simulate_exits
from .errors import ConfigError, DomainError
from .models import constant_model, diffusivity_probe
from .rng import StreamKey, derive_seed, normals, uniforms

__all__ = [
    "KINDS",
    "REFERENCE_STEP",
    "ReferenceSample",
    "sample_stopped_sigma_bm",
    "sample_uniform_sphere",
    "exact_two_point",
    "save_reference",
    "load_reference",
]

KINDS = ("stopped_sigma_bm", "uniform_sphere", "two_point")
REFERENCE_STEP = 1e-5


@dataclass
class ReferenceSample:
    """Draws ``(tau_i, value_i)``; ``times`` is ``None`` for laws without a time."""

    kind: str
    dimension: int
    values: np.ndarray                  # (count, dimension)
    times: Optional[np.ndarray] = None  # (count,)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown reference kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float).reshape(-1, self.dimension)
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=float).reshape(-1)
            if len(self.times) != len(self.values):
                raise DomainError("one time per draw is required")

    def __len__(self):
        return len(self.values)


def _seed(key: StreamKey, kind):
    return derive_seed(key.master_seed, f"reference/{kind}/{key.substream_counter}")


def _paths(key: StreamKey, count):
    return key.path_index + np.arange(count, dtype=np.int64)


def sample_stopped_sigma_bm(sigma, count, h=REFERENCE_STEP, key=None, workers=1, backend=None):
    """Exit time and exit position of ``Sigma W`` from the unit ball (substepped detection)."""
    key = StreamKey(0, 0) if key is None else key
    sig = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sig.ndim != 2 or sig.shape[0] != sig.shape[1]:
        raise ConfigError("Sigma must be a square matrix", field="sigma")
    if not diffusivity_probe(lambda y: np.broadcast_to(sig, np.shape(y)[:-1] + sig.shape),
                             np.zeros(len(sig))) > 0:
        raise ConfigError("Sigma fails the diffusivity probe", field="sigma")
    if count < 0:
        raise DomainError("count must be non-negative")
    d = len(sig)
    if count == 0:
        return ReferenceSample("stopped_sigma_bm", d, np.empty((0, d)), np.empty(0))
    model = constant_model(sig, name="sigma_bm")
    batch = simulate_exits(model, model.initial, 1.0, h, "substepped",
                           _seed(key, "stopped_sigma_bm"), _paths(key, count),
                           workers=workers, backend=backend)
    return ReferenceSample("stopped_sigma_bm", d, batch.exit_state, batch.exit_time)


def sample_uniform_sphere(d, count, key=None):
    """I.i.d. points on the unit sphere of ``R^d`` (normalised Gaussian vectors)."""
    key = StreamKey(0, 0) if key is None else key
    if d < 1:
        raise DomainError("dimension must be at least 1")
    if count < 0:
        raise DomainError("count must be non-negative")
    seed = _seed(key, "uniform_sphere")
    paths = _paths(key, count)
    g = normals(seed, paths, 0, 0, d).reshape(count, d)
    norm = np.linalg.norm(g, axis=1)
    attempt = 1
    # probability-zero guard: redraw any exact zero vector from later draws
    while np.any(norm == 0.0):
        bad = np.flatnonzero(norm == 0.0)
        g[bad] = normals(seed, paths[bad], 0, attempt * d, d)
        norm[bad] = np.linalg.norm(g[bad], axis=1)
        attempt += 1
    return ReferenceSample("uniform_sphere", d, g / norm[:, None])


def exact_two_point(count, key=None):
    """Fair draws from ``{-1, +1}``."""
    key = StreamKey(0, 0) if key is None else key
    if count < 0:
        raise DomainError("count must be non-negative")
    u = uniforms(_seed(key, "two_point"), _paths(key, count), 0, 0, 1).reshape(count)
    return ReferenceSample("two_point", 1, np.where(u < 0.5, 1.0, -1.0))


def save_reference(sample: ReferenceSample, path):
    """Write one CSV row per draw: ``index, tau, v0, v1, ...``."""
    path = Path(path)
    cols = [f"v{i}" for i in range(sample.dimension)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["# kind", sample.kind, "dimension", sample.dimension])
        w.writerow(["index", "tau"] + cols)
        for i, v in enumerate(sample.values):
            tau = "" if sample.times is None else repr(float(sample.times[i]))
            w.writerow([i, tau] + [repr(float(c)) for c in v])
    return path


def load_reference(path) -> ReferenceSample:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0] != "# kind":
        raise DomainError(f"{path} is not a reference sample file")
    kind, d = rows[0][1], int(rows[0][3])
    body = rows[2:]
    values = np.array([[float(c) for c in r[2:]] for r in body]).reshape(-1, d)
    times = None
    if body and body[0][1] != "":
        times = np.array([float(r[1]) for r in body])
    elif not body and kind == "stopped_sigma_bm":
        times = np.empty(0)
    return ReferenceSample(kind, d, values, times)
