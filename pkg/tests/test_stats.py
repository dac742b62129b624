import json
import math

import numpy as np
import pytest
from scipy import stats as sps

from shrinkball.errors import DomainError
from shrinkball.reference import exact_two_point, sample_uniform_sphere
from shrinkball.rng import StreamKey
from shrinkball.stats import (TestReport, chi2_sphere_uniformity, ks_point_mass, ks_two_sample,
                              mean_with_ci, rejection_rate, tightness_diagnostic, wasserstein,
                              write_reports)


def test_ks_identical_samples():
    x = np.arange(10.0)
    r = ks_two_sample(x, x)
    assert r.statistic == 0.0 and r.p_value == 1.0 and r.passed


def test_ks_against_scipy(rng):
    a, b = rng.normal(size=300), rng.normal(0.2, 1, size=450)
    assert ks_two_sample(a, b).statistic == pytest.approx(sps.ks_2samp(a, b).statistic, abs=1e-15)
    # asymptotic Kolmogorov tail at sqrt(n m / (n + m)) D
    d = ks_two_sample(a, b).statistic
    en = 300 * 450 / 750
    assert ks_two_sample(a, b).p_value == pytest.approx(sps.kstwobign.sf(math.sqrt(en) * d))


def test_ks_zeros_vs_fair_signs():
    signs = exact_two_point(20_000, StreamKey(1, 0)).values
    assert ks_two_sample(np.zeros(20_000), signs).statistic == pytest.approx(0.5, abs=0.01)


def test_ks_symmetric(rng):
    a, b = rng.exponential(size=123), rng.exponential(size=77)
    r1, r2 = ks_two_sample(a, b), ks_two_sample(b, a)
    assert r1.statistic == r2.statistic and r1.p_value == r2.p_value


def test_ks_empty_raises():
    with pytest.raises(DomainError):
        ks_two_sample([], [1.0])


def test_ks_level_on_fair_signs():
    def pair(k):
        return (exact_two_point(10_000, k.substream(1)).values,
                exact_two_point(10_000, k.substream(2)).values)
    assert rejection_rate(pair, ks_two_sample, 100) <= 0.02


def test_point_mass_distance():
    r = ks_point_mass([1.0, 1.0 + 1e-12, 0.5, 2.0], 1.0)
    assert r.statistic == 0.25
    assert ks_point_mass(np.ones(10)).statistic == 0.0


def test_chi2_exact_values():
    ang = (np.arange(8) + 0.5) * 2 * np.pi / 8
    pts = np.repeat(np.c_[np.cos(ang), np.sin(ang)], 10, axis=0)
    assert chi2_sphere_uniformity(pts, 8).statistic == pytest.approx(0.0, abs=1e-12)
    one = np.tile([[1.0, 0.0]], (80, 1))
    # all N points in one of k bins: N (k - 1)
    assert chi2_sphere_uniformity(one, 8).statistic == pytest.approx(80 * 7)


@pytest.mark.parametrize("bad", [np.ones((40, 2)), np.ones((40, 3)), np.tile([[1.0, 0.0]], (5, 1))])
def test_chi2_errors(bad):
    with pytest.raises(DomainError):
        chi2_sphere_uniformity(bad, 8)


def test_chi2_level():
    def pair(k):
        return sample_uniform_sphere(2, 100_000, k).values, None
    rate = rejection_rate(pair, lambda a, b, threshold: chi2_sphere_uniformity(a, 8, threshold),
                          100)
    assert rate <= 0.02


def test_tightness_diagnostic():
    assert tightness_diagnostic(np.zeros(10), 0.5, 0.95).statistic == 0.0
    r = tightness_diagnostic([0.6, 0.2, 0.5, 0.9], 0.5, 0.7)
    assert r.statistic == 0.75 and r.passed
    assert not tightness_diagnostic([0.6, 0.2], 0.5, 0.1, mode="at_most").passed
    with pytest.raises(DomainError):
        tightness_diagnostic([0.1], 1.5, 0.5)


def test_mean_with_ci():
    assert mean_with_ci(np.full(5, 3.0)) == (3.0, 0.0)
    signs = exact_two_point(10_000, StreamKey(9, 0)).values
    _, half = mean_with_ci(signs)
    assert half == pytest.approx(0.0196, abs=2e-4)
    with pytest.raises(DomainError):
        mean_with_ci([])
    with pytest.raises(DomainError):
        mean_with_ci([1.0, np.nan])


def test_report_serialisation(tmp_path):
    r = ks_two_sample([0.0, 1.0], [0.5, 2.0], metadata={"n": 10, "h": 1e-3, "seed": np.uint64(3)})
    d = json.loads(r.to_json())
    assert set(d) == {"test_name", "statistic", "p_value", "threshold", "target", "decision_rule",
                      "declared", "pass", "sample_sizes", "metadata"}
    assert d["metadata"] == {"n": 10, "h": 1e-3, "method": None, "seed": 3}
    write_reports([r], tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())[0]["statistic"] == r.statistic


def test_report_rules():
    assert TestReport("x", 0.51, None, 0.02, "within", (1, 0), target=0.5).passed
    assert not TestReport("x", 0.53, None, 0.02, "within", (1, 0), target=0.5).passed
    with pytest.raises(DomainError):
        TestReport("x", 0.5, None, 0.1, "within", (1, 0))
    with pytest.raises(DomainError):
        TestReport("x", 0.5, None, 0.1, "sometimes", (1, 0))


def test_wasserstein_is_supplementary():
    r = wasserstein([1.0, -1.0], [1.005, -0.995])
    assert r.statistic == pytest.approx(0.005) and not r.declared
