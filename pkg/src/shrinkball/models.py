"""Diffusion models, observables, sampled paths and their catalogs.

Drift, diffusion, observables and Jacobians all broadcast over leading
axes: a state array of shape ``(..., d)`` maps to drift ``(..., d)``,
diffusion ``(..., d, d)``, observable values ``(..., l)`` and Jacobians
``(..., l, d)``.  The numpy fallback engine relies on this to step many
paths at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "KernelSpec",
    "SdeModel",
    "Observable",
    "PathGrid",
    "probe_points",
    "diffusivity_probe",
    "jacobian_error",
    "constant_model",
    "rotation",
    "MODELS",
    "OBSERVABLES",
    "get_model",
    "get_observable",
]


@dataclass(frozen=True)
class KernelSpec:
    """Parameters the compiled kernel understands.

    kind 0: drift ``-kappa * y`` with constant diffusion matrix ``sigma``.
    kind 1: drift ``-kappa * y`` with ``diag(1 + y1^2 / (1 + y1^2), 1)``.
    """

    kind: int
    kappa: float
    sigma: np.ndarray


@dataclass(frozen=True, eq=False)
class SdeModel:
    name: str
    dimension: int
    drift: Callable
    diffusion: Callable
    initial: np.ndarray
    kernel: Optional[KernelSpec] = None
    # operator-norm bound of the diffusion on the unit ball around ``initial``;
    # filled in by the constructor from the probe set when left at 0
    sigma_max: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.initial, dtype=float).reshape(-1)
        if x.size != self.dimension:
            raise ConfigError(
                f"initial point has {x.size} coordinates, expected {self.dimension}",
                field="model")
        object.__setattr__(self, "initial", x)
        pts = probe_points(x, 1.0)
        mu = np.asarray(self.drift(pts))
        sig = np.asarray(self.diffusion(pts))
        if mu.shape != pts.shape or sig.shape != pts.shape + (self.dimension,):
            raise ConfigError(f"model {self.name!r} returns arrays of the wrong shape",
                              field="model")
        if self.sigma_max <= 0:
            bound = float(np.max(np.linalg.norm(sig, ord=2, axis=(-2, -1))))
            object.__setattr__(self, "sigma_max", bound)

    def __repr__(self):
        return f"SdeModel({self.name!r}, d={self.dimension})"


@dataclass(frozen=True, eq=False)
class Observable:
    name: str
    codomain: int
    f: Callable
    jacobian_fn: Optional[Callable] = None
    hessians: Optional[Sequence[Callable]] = None
    fd_step: float = 1e-6
    # affine maps have an identically zero Taylor remainder
    linear: bool = False

    def __call__(self, y):
        return self.f(np.asarray(y, dtype=float))

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        if self.jacobian_fn is not None:
            return self.jacobian_fn(y)
        return self.fd_jacobian(y)

    def fd_jacobian(self, y, step=None):
        """Central finite-difference Jacobian, shape ``(..., l, d)``."""
        step = self.fd_step if step is None else step
        y = np.asarray(y, dtype=float)
        d = y.shape[-1]
        cols = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            cols.append((self.f(y + e) - self.f(y - e)) / (2 * step))
        return np.stack(cols, axis=-1)

    def __repr__(self):
        return f"Observable({self.name!r}, l={self.codomain})"


@dataclass(eq=False)
class PathGrid:
    """A sampled path ``t -> X_t`` on a strictly increasing time grid.

    ``increments[j]`` is the driving Brownian increment over
    ``[times[j], times[j+1]]`` when it was retained.  ``step`` is set for
    uniform grids with ``times[j] == j * step``.
    """

    times: np.ndarray
    states: np.ndarray
    increments: Optional[np.ndarray] = field(default=None)
    step: Optional[float] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        self.states = states
        if self.times.ndim != 1 or len(self.times) != len(states):
            raise DomainError("times and states must have matching lengths")
        if len(self.times) == 0 or self.times[0] != 0.0:
            raise DomainError("a path grid starts at time 0")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("path grid times must be strictly increasing")
        if self.increments is not None:
            inc = np.asarray(self.increments, dtype=float).reshape(-1, states.shape[1])
            if len(inc) != len(states) - 1:
                raise DomainError("need one increment per grid interval")
            self.increments = inc

    @property
    def dimension(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    def value_at(self, t):
        """Previous-grid-point lookup (cadlag step interpolation)."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.maximum(idx, 0)]


def probe_points(center, radius=1.0, count=1024):
    """Deterministic probe set in the closed ball around ``center``.

    Contains the center, the 2d axis points on the sphere and a Fibonacci
    style spiral (d <= 2) or a fixed Gaussian-direction cloud (d > 2).
    """
    c = np.asarray(center, dtype=float).reshape(-1)
    d = c.size
    pts = [np.zeros(d)]
    eye = np.eye(d)
    pts.extend(eye)
    pts.extend(-eye)
    rest = count - len(pts)
    if d == 1:
        grid = np.linspace(-1.0, 1.0, rest)[:, None]
    elif d == 2:
        k = np.arange(rest) + 0.5
        rad = np.sqrt(k / rest)
        ang = k * math.pi * (3.0 - math.sqrt(5.0))
        grid = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    else:
        from .rng import normals, uniforms
        g = normals(0x5EED, np.arange(rest), 0, 0, d)
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = uniforms(0x5EED, np.arange(rest), 1, 0, 1)
        grid = g * u ** (1.0 / d)
    return c + radius * np.vstack([np.array(pts), grid])


def diffusivity_probe(diffusion, center, radius=1.0):
    """``max_k min_y (sigma sigma')_{kk}(y)`` over the probe set."""
    pts = probe_points(center, radius)
    sig = np.asarray(diffusion(pts))
    diag = np.einsum("nij,nij->ni", sig, sig)
    return float(np.max(np.min(diag, axis=0)))


def jacobian_error(obs: Observable, center, radius=1.0, count=100, step=1e-6):
    """Largest relative gap between the analytic and central-FD Jacobians."""
    pts = probe_points(center, radius, count=max(count, 8))[:count]
    jan = np.asarray(obs.jacobian(pts))
    jfd = obs.fd_jacobian(pts, step=step)
    num = np.linalg.norm(jan - jfd, axis=(-2, -1))
    den = np.maximum(np.linalg.norm(jan, axis=(-2, -1)), 1.0)
    return float(np.max(num / den))


def _broadcast_matrix(mat, y):
    y = np.asarray(y)
    return np.broadcast_to(mat, y.shape[:-1] + mat.shape)


def constant_model(sigma, name="sigma_bm", kappa=0.0, initial=None):
    """``dX = -kappa X dt + sigma dW`` started at ``initial`` (default 0)."""
    sig = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sig.shape[0]
    if sig.shape != (d, d):
        raise ConfigError("diffusion matrix must be square", field="model")
    x0 = np.zeros(d) if initial is None else np.asarray(initial, dtype=float)
    sig.setflags(write=False)

    def drift(y):
        return -kappa * np.asarray(y, dtype=float)

    def diffusion(y):
        return _broadcast_matrix(sig, y)

    return SdeModel(name, d, drift, diffusion, x0,
                    kernel=KernelSpec(0, float(kappa), sig))


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _state_dependent_diffusion(y):
    y = np.asarray(y, dtype=float)
    y1 = y[..., 0]
    out = np.zeros(y.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0 + y1 * y1 / (1.0 + y1 * y1)
    out[..., 1, 1] = 1.0
    return out


def _state_dependent_model():
    return SdeModel("diag2", 2, lambda y: -np.asarray(y, dtype=float),
                    _state_dependent_diffusion, np.zeros(2),
                    kernel=KernelSpec(1, 1.0, np.eye(2)))


MODELS = {
    "bm1": lambda: constant_model(np.eye(1), name="bm1"),
    "bm2": lambda: constant_model(np.eye(2), name="bm2"),
    "ou1": lambda: constant_model(np.eye(1), name="ou1", kappa=1.0),
    "rotbm2": lambda: constant_model(rotation(math.pi / 6), name="rotbm2"),
    "diag2": _state_dependent_model,
}

MODEL_NOTES = {
    "bm1": "standard Brownian motion, d=1, x=0",
    "bm2": "standard Brownian motion, d=2, x=0",
    "ou1": "Ornstein-Uhlenbeck dX = -X dt + dW, d=1, x=0",
    "rotbm2": "rotated Brownian motion, sigma = rotation(pi/6), d=2, x=0",
    "diag2": "dX = -X dt + diag(1 + X1^2/(1 + X1^2), 1) dW, d=2, x=0",
}


def get_model(name: str) -> SdeModel:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model id {name!r}", field="model") from None
    model = factory()
    if not diffusivity_probe(model.diffusion, model.initial) > 0:
        raise ConfigError(f"model {name!r} fails the diffusivity probe", field="model")
    return model


# -- observables -------------------------------------------------------------

def _identity(d):
    eye = np.eye(d)
    return Observable(
        "identity", d, lambda y: np.array(y, dtype=float),
        lambda y: _broadcast_matrix(eye, y),
        [lambda y: _broadcast_matrix(np.zeros((d, d)), y)] * d, linear=True)


def _exp_minus_one(d):
    def jac(y):
        e = np.exp(y)
        return e[..., :, None] * np.eye(d)

    def hess(k):
        def h(y):
            out = np.zeros(np.shape(y)[:-1] + (d, d))
            out[..., k, k] = np.exp(np.asarray(y)[..., k])
            return out
        return h

    return Observable("exp_minus_one", d, lambda y: np.expm1(y), jac,
                      [hess(k) for k in range(d)])


def linear_observable(matrix, name="linear"):
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = a.shape[1]
    return Observable(name, a.shape[0], lambda y: np.asarray(y) @ a.T,
                      lambda y: _broadcast_matrix(a, y),
                      [lambda y: _broadcast_matrix(np.zeros((d, d)), y)] * a.shape[0],
                      linear=True)


def _weighted_sum(d):
    return linear_observable(np.arange(1.0, d + 1.0)[None, :], name="weighted_sum")


def _trig_mix(d):
    if d != 2:
        raise ConfigError("trig_mix needs d = 2", field="observable")

    def f(y):
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([np.sin(y1) + 0.5 * y2 * y2, y1 * y2 + y2], axis=-1)

    def jac(y):
        y1, y2 = y[..., 0], y[..., 1]
        out = np.empty(np.shape(y)[:-1] + (2, 2))
        out[..., 0, 0] = np.cos(y1)
        out[..., 0, 1] = y2
        out[..., 1, 0] = y2
        out[..., 1, 1] = y1 + 1.0
        return out

    def h0(y):
        out = np.zeros(np.shape(y)[:-1] + (2, 2))
        out[..., 0, 0] = -np.sin(np.asarray(y)[..., 0])
        out[..., 1, 1] = 1.0
        return out

    def h1(y):
        out = np.zeros(np.shape(y)[:-1] + (2, 2))
        out[..., 0, 1] = out[..., 1, 0] = 1.0
        return out

    return Observable("trig_mix", 2, f, jac, [h0, h1])


OBSERVABLES = {
    "identity": _identity,
    "exp_minus_one": _exp_minus_one,
    "weighted_sum": _weighted_sum,
    "trig_mix": _trig_mix,
}

OBSERVABLE_NOTES = {
    "identity": "f(y) = y",
    "exp_minus_one": "f(y) = exp(y) - 1 componentwise",
    "weighted_sum": "f(y) = sum_k k * y_k (scalar, linear)",
    "trig_mix": "f(y) = (sin y1 + y2^2/2, y1 y2 + y2), d=2",
}


def get_observable(name: str, dimension: int) -> Observable:
    try:
        factory = OBSERVABLES[name]
    except KeyError:
        raise ConfigError(f"unknown observable id {name!r}", field="observable") from None
    return factory(dimension)
