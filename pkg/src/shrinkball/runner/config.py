"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, lists are comma separated::

    experiment = example1
    model = bm1
    observable = exp_minus_one
    n_grid = 10000
    paths = 100000

Values are typed by the fields of :class:`ExperimentConfig`; unknown keys
and malformed values raise :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from ..errors import ConfigError
from ..exits import METHODS
from ..models import MODELS, OBSERVABLES

EXPERIMENTS = (
    "example1",
    "fdd_grid",
    "exit_time_law",
    "sphere_uniformity",
    "non_tightness",
    "remainder_ucp",
    "bias_study",
    "martingale_horizon",
)


@dataclass
class ExperimentConfig:
    experiment: str
    # output sub-directory; defaults to the experiment kind
    name: str = ""
    model: str = "bm1"
    observable: str = "exp_minus_one"
    n_grid: List[int] = field(default_factory=lambda: [10000])
    paths: int = 10000
    # step policy h = h0 / n, i.e. h0 * r^2 with r = n^(-1/2)
    h0: float = 1e-2
    # empty selects bridge_corrected for d = 1 and substepped otherwise
    method: str = ""
    refine: int = 100
    times: List[float] = field(default_factory=list)
    allow_zero: bool = False
    delta: float = 0.01
    eps: float = 0.5
    horizon: float = 1.0
    horizons: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    fine_factor: int = 4
    check_identity: bool = True
    mean_oracle: bool = False
    reference_paths: int = 10000
    reference_step: float = 1e-5
    control_paths: int = 10000
    control_delta: float = 1e-4
    control_step: float = 1e-6
    master_seed: int = 0
    out_dir: str = "runs"
    # declared thresholds (engineering choices, recorded in every report)
    ks_p: float = 0.01
    chi2_p: float = 0.01
    chi2_bins: int = 8
    ks_max: float = 0.02
    exceed_min: float = 0.95
    control_max: float = 0.01
    remainder_eps: float = 0.1
    remainder_max: float = 0.05
    sign_tol: float = 0.015
    abs_tol: float = 0.02
    mean_rtol: float = 0.02
    slope_target: float = 0.5
    slope_tol: float = 0.15

    def validate(self):
        """Raise :class:`ConfigError` (with the key) on the first invalid setting."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}", field="experiment")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model id {self.model!r}", field="model")
        if self.observable not in OBSERVABLES:
            raise ConfigError(f"unknown observable id {self.observable!r}", field="observable")
        if self.method and self.method not in METHODS:
            raise ConfigError(f"unknown detection method {self.method!r}", field="method")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid needs positive integers", field="n_grid")
        if list(self.n_grid) != sorted(self.n_grid):
            raise ConfigError("n_grid must be sorted ascending", field="n_grid")
        for name in ("paths", "refine", "chi2_bins", "fine_factor"):
            if getattr(self, name) < 1:
                raise ConfigError("must be positive", field=name)
        for name in ("reference_paths", "control_paths"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", field=name)
        for name in ("h0", "reference_step", "control_step", "control_delta", "horizon",
                     "delta"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", field=name)
        if any(t < 0 for t in self.times) or list(self.times) != sorted(self.times):
            raise ConfigError("times must be non-negative and sorted", field="times")
        if self.allow_zero and self.experiment != "non_tightness":
            raise ConfigError("allow_zero is only permitted for non_tightness",
                              field="allow_zero")
        if not self.allow_zero and any(t == 0 for t in self.times):
            raise ConfigError("time 0 in the grid requires allow_zero = true", field="times")
        if not 0 < self.eps < 1 or not 0 < self.remainder_eps:
            raise ConfigError("eps must lie in (0, 1)", field="eps")
        if any(a < 0 for a in self.horizons):
            raise ConfigError("horizons must be non-negative", field="horizons")
        if self.experiment == "bias_study":
            if len(self.steps) < 2 or any(h <= 0 for h in self.steps):
                raise ConfigError("bias_study needs at least two positive steps",
                                  field="steps")
        if self.experiment == "martingale_horizon" and not self.horizons:
            raise ConfigError("martingale_horizon needs a horizons list", field="horizons")
        if self.name and (self.name != Path(self.name).name or self.name.startswith(".")):
            raise ConfigError("must be a plain directory name", field="name")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("must fit in 64 unsigned bits", field="master_seed")
        return self

    @property
    def run_name(self):
        return self.name or self.experiment

    def snapshot(self):
        return dataclasses.asdict(self)


_HINTS = typing.get_type_hints(ExperimentConfig)


def _parse_scalar(kind, text, key):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            # allow 1e5 style counts but reject fractional values
            if "e" in text.lower():
                value = float(text)
                if value != int(value):
                    raise ValueError(text)
                return int(value)
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {kind.__name__}", field=key) from None


def _parse_value(key, text):
    kind = _HINTS[key]
    if typing.get_origin(kind) in (list, List):
        (item,) = typing.get_args(kind)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return [_parse_scalar(item, p, key) for p in parts]
    return _parse_scalar(kind, text, key)


def parse_config(text: str, overrides=None) -> ExperimentConfig:
    """Build and validate a config from file text plus ``overrides`` (already typed)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"unknown key (line {lineno})", field=key)
        if key in values:
            raise ConfigError(f"key repeated (line {lineno})", field=key)
        values[key] = _parse_value(key, val)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "experiment" not in values:
        raise ConfigError("missing required key", field="experiment")
    return ExperimentConfig(**values).validate()


def load_config(path, overrides=None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` for a validated config."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            text = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
