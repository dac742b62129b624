import math

import numpy as np
import pytest

from shrinkball.engine import simulate_on_grid, simulate_until_exit
from shrinkball.errors import ConfigError, DomainError
from shrinkball.exits import (ExitRecord, bridge_crossing_probability, detect_exit,
                              method_code)
from shrinkball.models import PathGrid, get_model
from shrinkball.rng import StreamKey


def test_crossing_probability_values():
    # exp(-2 (1 - 0.5)(1 - 0.5) / (1 * 0.25)) = exp(-2)
    assert bridge_crossing_probability(0.5, 0.5, 1.0, 0.25, 1.0) == pytest.approx(math.exp(-2))
    assert bridge_crossing_probability(1.0, 0.2, 1.0, 0.1, 2.0) == 1.0


@pytest.mark.parametrize("args", [(0, 0, 1, 0.0, 1), (0, 0, 1, 1, 0.0), (1.2, 0, 1, 1, 1)])
def test_crossing_probability_errors(args):
    with pytest.raises(DomainError):
        bridge_crossing_probability(*args)


def test_method_codes():
    assert method_code("naive") == 0
    with pytest.raises(ConfigError, match="method"):
        method_code("euler")
    with pytest.raises(ConfigError, match="method"):
        method_code("bridge_corrected", 2)


def test_naive_detection_on_hand_made_grid(bm1):
    g = PathGrid([0, 1, 2, 3], [[0.0], [0.5], [1.5], [0.0]], step=1.0)
    rec = detect_exit(g, [0.0], 1.0, "naive", StreamKey(0, 0), bm1)
    assert rec.exit_time == 2.0
    assert rec.exit_state[0] == 1.0
    assert len(rec.pre_exit_grid) == 3
    rec.check()


def test_no_exit_returns_none(bm1):
    g = PathGrid([0, 1], [[0.0], [0.1]], step=1.0)
    assert detect_exit(g, [0.0], 1.0, "naive", StreamKey(0, 0), bm1) is None


def test_start_outside_is_rejected(bm1):
    g = PathGrid([0, 1], [[2.0], [0.1]])
    with pytest.raises(DomainError):
        detect_exit(g, [0.0], 1.0, "naive", StreamKey(0, 0), bm1)


def test_substepped_needs_increments(bm2):
    g = PathGrid([0, 1], [[0.0, 0.0], [0.1, 0.0]])
    with pytest.raises(ConfigError):
        detect_exit(g, np.zeros(2), 1.0, "substepped", StreamKey(0, 0), bm2)


@pytest.mark.parametrize("model,method", [
    ("bm1", "naive"), ("bm1", "bridge_corrected"), ("bm1", "substepped"), ("ou1", "bridge_corrected"),
    ("bm2", "naive"), ("bm2", "substepped"), ("rotbm2", "substepped"), ("diag2", "substepped"),
])
def test_fused_detection_matches_post_hoc(model, method, backend_name):
    m = get_model(model)
    for i in range(15):
        key = StreamKey(7, i)
        a = simulate_until_exit(m, m.initial, 0.3, 1e-3, key, method=method, backend=backend_name)
        g = simulate_on_grid(m, a.exit_time + 0.01, 1e-3, key, backend=backend_name)
        b = detect_exit(g, m.initial, 0.3, method, key, m)
        assert a.exit_time == b.exit_time
        assert np.array_equal(a.exit_state, b.exit_state)
        assert np.array_equal(a.pre_exit_grid.states, b.pre_exit_grid.states)
        a.check()


@pytest.mark.parametrize("model,method", [("bm1", "bridge_corrected"), ("bm2", "substepped"),
                                          ("diag2", "substepped"), ("bm1", "naive")])
def test_record_invariants(model, method, backend_name):
    m = get_model(model)
    for i in range(30):
        rec = simulate_until_exit(m, m.initial, 0.2, 4e-4, StreamKey(3, i), method=method,
                                  backend=backend_name)
        rec.check()
        assert isinstance(rec, ExitRecord)
        assert rec.pre_exit_grid.increments.shape == (len(rec.pre_exit_grid) - 1, m.dimension)


def test_bridge_exit_sits_at_interval_midpoint(bm1):
    hits = 0
    for i in range(60):
        rec = simulate_until_exit(bm1, [0.0], 0.2, 4e-3, StreamKey(1, i), method="bridge_corrected")
        lo, hi = rec.interval
        last = abs(rec.pre_exit_grid.states[-1, 0])
        if last < 0.2:
            hits += 1
            assert rec.exit_time == 0.5 * (lo + hi)
            assert abs(rec.exit_state[0]) == 0.2
    assert hits > 0


def test_refinement_keeps_coarse_endpoint():
    # fine increments are conditioned to add up to the coarse one
    from shrinkball import _fallback
    m = get_model("bm2")
    ya = np.array([[0.0, 0.0]])
    dw = np.array([[0.3, -0.1]])
    found, _, _ = _fallback._refine(m, ya, dw, 0.01, 50, 4, np.array([0]), 0, np.zeros(2), 10.0)
    assert not found[0]
    from shrinkball.rng import SUB_REFINE, normals
    xi = normals(4, [0], SUB_REFINE, 0, 100).reshape(50, 2) * math.sqrt(0.01 / 50)
    inc = xi - xi.sum(axis=0) / 50 + dw[0] / 50
    assert np.allclose(inc.sum(axis=0), dw[0], atol=1e-15)


def test_corrected_reduces_bias(bm1):
    from shrinkball.engine import simulate_exits
    paths = np.arange(3000)
    naive = simulate_exits(bm1, [0.0], 1.0, 4e-3, "naive", 8, paths).exit_time.mean()
    corr = simulate_exits(bm1, [0.0], 1.0, 4e-3, "bridge_corrected", 8, paths).exit_time.mean()
    sub = simulate_exits(bm1, [0.0], 1.0, 4e-3, "substepped", 8, paths).exit_time.mean()
    # naive overshoots E[tau] = 1 by roughly 1.2 sqrt(h) ~ 0.07
    assert naive - corr > 0.04
    assert abs(sub - corr) < 0.03
