"""Statistical verdicts with JSON-serialisable reports.

Every test returns a :class:`TestReport` whose ``passed`` flag is the
declared decision rule applied to ``statistic``, ``p_value`` and
``threshold``.  Thresholds are engineering choices passed in by the
caller and recorded in the report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special, stats as _sps

from .errors import DomainError
from .rng import StreamKey

__all__ = [
    "RULES",
    "PROVENANCE",
    "TestReport",
    "ks_two_sample",
    "ks_point_mass",
    "chi2_sphere_uniformity",
    "tightness_diagnostic",
    "mean_with_ci",
    "rejection_rate",
    "wasserstein",
    "write_reports",
]

PROVENANCE = ("n", "h", "method", "seed")

RULES = {
    "p_above": lambda s, p, t: p is not None and p > t,
    "stat_at_most": lambda s, p, t: s <= t,
    "stat_at_least": lambda s, p, t: s >= t,
}
RULE_TEXT_WITHIN = "abs(statistic - target) <= threshold"
RULE_TEXT = {
    "p_above": "p_value > threshold",
    "stat_at_most": "statistic <= threshold",
    "stat_at_least": "statistic >= threshold",
}


@dataclass
class TestReport:
    """Outcome of one test.

    ``metadata`` always carries the provenance keys ``n``, ``h``,
    ``method`` and ``seed``; a key that does not apply holds ``None``.
    Rule ``"within"`` compares ``statistic`` with ``target``.  Reports with
    ``declared=False`` are supplementary and never decide a run's outcome.
    """

    __test__ = False  # keep pytest from collecting this class

    test_name: str
    statistic: float
    p_value: Optional[float]
    threshold: float
    rule: str
    sample_sizes: tuple
    metadata: dict = field(default_factory=dict)
    target: Optional[float] = None
    declared: bool = True
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.rule == "within":
            if self.target is None:
                raise DomainError("rule 'within' needs a target")
        elif self.rule not in RULES:
            raise DomainError(f"unknown decision rule {self.rule!r}")
        self.statistic = float(self.statistic)
        self.p_value = None if self.p_value is None else float(self.p_value)
        self.threshold = float(self.threshold)
        self.sample_sizes = tuple(int(s) for s in self.sample_sizes)
        meta = {k: None for k in PROVENANCE}
        meta.update(self.metadata or {})
        self.metadata = meta
        if self.rule == "within":
            self.target = float(self.target)
            self.passed = bool(abs(self.statistic - self.target) <= self.threshold)
        else:
            self.passed = bool(RULES[self.rule](self.statistic, self.p_value, self.threshold))

    def to_dict(self):
        rule = RULE_TEXT_WITHIN if self.rule == "within" else RULE_TEXT[self.rule]
        return {
            "test_name": self.test_name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "threshold": self.threshold,
            "target": self.target,
            "decision_rule": rule,
            "declared": self.declared,
            "pass": self.passed,
            "sample_sizes": list(self.sample_sizes),
            "metadata": {k: _plain(v) for k, v in self.metadata.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return v


def write_reports(reports, path):
    """Write a JSON array of reports (stable key order)."""
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sample(x, what):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.size == 0:
        raise DomainError(f"{what} is empty")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{what} contains non-finite values")
    return a


def ks_two_sample(s1, s2, threshold=0.01, metadata=None, name="ks_two_sample"):
    """Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value.

    The p-value is ``Q_KS(sqrt(n1 n2 / (n1 + n2)) * D)``.
    """
    a = np.sort(_sample(s1, "first sample"))
    b = np.sort(_sample(s2, "second sample"))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = a.size * b.size / (a.size + b.size)
    p = float(special.kolmogorov(math.sqrt(en) * d))
    return TestReport(name, d, p, threshold, "p_above", (a.size, b.size), metadata)


def ks_point_mass(values, point=1.0, atol=1e-9, threshold=0.02, metadata=None,
                  name="ks_point_mass"):
    """Kolmogorov distance between the sample and the point mass at ``point``.

    Values within ``atol`` of ``point`` count as equal to it.
    """
    a = _sample(values, "sample")
    below = np.count_nonzero(a < point - atol) / a.size
    above = np.count_nonzero(a > point + atol) / a.size
    return TestReport(name, max(below, above), None, threshold, "stat_at_most",
                      (a.size, 1), metadata)


def wasserstein(s1, s2, threshold=0.02, metadata=None, name="wasserstein_1"):
    """Supplementary first Wasserstein distance between two samples."""
    a = _sample(s1, "first sample")
    b = _sample(s2, "second sample")
    d = _sps.wasserstein_distance(a, b)
    return TestReport(name, d, None, threshold, "stat_at_most", (a.size, b.size), metadata,
                      declared=False)


def chi2_sphere_uniformity(values, bins=8, threshold=0.01, atol=1e-9, metadata=None,
                           name="chi2_sphere_uniformity"):
    """Pearson chi-square test of uniform angle for unit vectors in the plane."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise DomainError("sphere uniformity is implemented for d = 2 only")
    if bins < 2:
        raise DomainError("need at least two bins")
    if len(v) < 5 * bins:
        raise DomainError(f"need at least {5 * bins} points for {bins} bins")
    norms = np.linalg.norm(v, axis=1)
    if np.any(np.abs(norms - 1.0) > atol):
        raise DomainError("all values must have unit norm")
    ang = np.mod(np.arctan2(v[:, 1], v[:, 0]), 2 * np.pi)
    idx = np.minimum((ang * (bins / (2 * np.pi))).astype(np.int64), bins - 1)
    observed = np.bincount(idx, minlength=bins)
    expected = len(v) / bins
    stat = float(np.sum((observed - expected) ** 2) / expected)
    p = float(_sps.chi2.sf(stat, bins - 1))
    meta = dict(metadata or {})
    meta.setdefault("bins", bins)
    return TestReport(name, stat, p, threshold, "p_above", (len(v), bins), meta)


def tightness_diagnostic(suprema, eps, threshold, mode="at_least", metadata=None,
                         name="tightness_diagnostic"):
    """Fraction of paths whose early supremum reaches ``eps``.

    ``mode="at_least"`` passes when the fraction is at least ``threshold``
    (non-tightness witness); ``mode="at_most"`` passes when it is at most
    ``threshold`` (controls).
    """
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    if mode not in ("at_least", "at_most"):
        raise DomainError(f"unknown mode {mode!r}")
    s = _sample(suprema, "suprema")
    frac = np.count_nonzero(s >= eps) / s.size
    rule = "stat_at_least" if mode == "at_least" else "stat_at_most"
    meta = dict(metadata or {})
    meta.setdefault("eps", eps)
    return TestReport(name, frac, None, threshold, rule, (s.size, 0), meta)


def mean_with_ci(values, confidence=0.95):
    """Sample mean and normal-approximation half-width at ``confidence``."""
    if not 0 < confidence < 1:
        raise DomainError("confidence must lie in (0, 1)")
    a = np.asarray(values, dtype=float).reshape(-1)
    if a.size < 2:
        raise DomainError("need at least two values")
    if not np.all(np.isfinite(a)):
        raise DomainError("values must be finite")
    z = _sps.norm.ppf(0.5 + confidence / 2)
    return float(a.mean()), float(z * a.std(ddof=1) / math.sqrt(a.size))


def rejection_rate(draw_pair: Callable[[StreamKey], tuple], test: Callable, repetitions=200,
                   threshold=0.01, master_seed=0):
    """Fraction of null repetitions rejected by ``test`` at ``threshold``.

    ``draw_pair(key)`` returns the two samples of repetition ``key.path_index``;
    ``test(s1, s2, threshold=...)`` returns a :class:`TestReport`.
    """
    rejected = 0
    for i in range(repetitions):
        s1, s2 = draw_pair(StreamKey(master_seed, i))
        if not test(s1, s2, threshold=threshold).passed:
            rejected += 1
    return rejected / repetitions
