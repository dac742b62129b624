import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shrinkball.exits import bridge_crossing_probability, detect_exit
from shrinkball.models import PathGrid, get_model, get_observable
from shrinkball.rng import StreamKey, normals, uniforms
from shrinkball.runner.config import ExperimentConfig, dump_config, parse_config
from shrinkball.scaling import time_scaled_path
from shrinkball.stats import TestReport, chi2_sphere_uniformity, ks_two_sample

seeds = st.integers(0, 2 ** 64 - 1)
finite = st.floats(-1e6, 1e6, allow_nan=False)
samples = arrays(np.float64, st.integers(1, 60), elements=finite)


@given(samples, samples)
def test_ks_symmetric_and_bounded(a, b):
    r1, r2 = ks_two_sample(a, b), ks_two_sample(b, a)
    assert r1.statistic == r2.statistic and r1.p_value == r2.p_value
    assert 0.0 <= r1.statistic <= 1.0 and 0.0 <= r1.p_value <= 1.0


@given(samples, st.randoms(use_true_random=False))
def test_ks_is_order_free(a, rnd):
    b = list(a)
    rnd.shuffle(b)
    assert ks_two_sample(a, b).statistic == 0.0


@given(seeds, st.integers(0, 2 ** 40), st.integers(0, 50), st.integers(1, 30))
def test_stream_windows_are_consistent(seed, path, start, count):
    full = uniforms(seed, [path], 3, 0, start + count)
    assert np.array_equal(uniforms(seed, [path], 3, start, count), full[:, start:])
    fz = normals(seed, [path], 3, 0, start + count)
    assert np.array_equal(normals(seed, [path], 3, start, count), fz[:, start:])


@given(seeds, st.integers(0, 1000), st.integers(1, 20))
def test_uniforms_open_interval(seed, path, count):
    u = uniforms(seed, [path], 0, 0, count)
    assert np.all((u > 0) & (u < 1))


@given(st.floats(0, 0.99), st.floats(-5, 0.99), st.floats(1e-6, 1), st.floats(0.1, 3))
def test_bridge_probability_in_unit_interval(a, b, dt, s):
    p = bridge_crossing_probability(a, b, 1.0, dt, s)
    assert 0.0 <= p <= 1.0
    assert bridge_crossing_probability(1.0, b, 1.0, dt, s) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from(["naive", "bridge_corrected"]),
       st.floats(0.05, 2.0))
def test_exit_lies_on_sphere_and_pre_exit_inside(seed, method, r):
    m = get_model("bm1")
    h = r * r / 50
    z = normals(seed, [0], 0, 0, 4000)[0] * math.sqrt(h)
    states = np.concatenate([[0.0], np.cumsum(z)])[:, None]
    g = PathGrid(np.arange(len(states)) * h, states, z[:, None], step=h)
    rec = detect_exit(g, [0.0], r, method, StreamKey(seed, 0), m)
    if rec is not None:
        assert abs(abs(rec.exit_state[0]) - r) <= 1e-12 * r
        rec.check()


@given(st.integers(1, 10 ** 6), arrays(np.float64, (5, 2), elements=st.floats(-3, 3)))
def test_time_scaled_path_starts_at_zero(n, states):
    g = PathGrid(np.arange(5) * 0.1, states, step=0.1)
    z = time_scaled_path(n, g, states[0])
    assert np.all(z.states[0] == 0.0)
    assert np.allclose(z.times, n * g.times)


@given(arrays(np.float64, st.integers(1, 5), elements=st.floats(-2, 2)))
def test_observables_vanish_at_origin_and_jacobian(x):
    for name in ("identity", "exp_minus_one"):
        f = get_observable(name, x.size)
        assert np.all(f(np.zeros(x.size)) == 0)
        assert np.allclose(f.jacobian(x), f.fd_jacobian(x), rtol=1e-5, atol=1e-8)


@given(st.floats(-10, 10), st.floats(0, 5), st.floats(-10, 10))
def test_within_rule(stat, thr, target):
    r = TestReport("w", stat, None, thr, "within", (1, 0), target=target)
    assert r.passed == (abs(stat - target) <= thr)


@settings(max_examples=30)
@given(st.integers(0, 7), st.integers(2, 12))
def test_chi2_invariant_under_bin_rotation(shift, bins):
    ang = np.linspace(0, 2 * np.pi, 7 * bins, endpoint=False) + 0.3 / bins
    ang = np.concatenate([ang, ang[: 3 * bins]])
    pts = np.c_[np.cos(ang), np.sin(ang)]
    rot = ang + 2 * np.pi * shift / bins
    a = chi2_sphere_uniformity(pts, bins).statistic
    b = chi2_sphere_uniformity(np.c_[np.cos(rot), np.sin(rot)], bins).statistic
    assert math.isclose(a, b, abs_tol=1e-9)


@given(st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=4, unique=True),
       st.integers(1, 10 ** 6), st.floats(1e-6, 1.0), seeds)
def test_config_round_trip(grid, paths, h0, seed):
    c = ExperimentConfig("remainder_ucp", n_grid=sorted(grid), paths=paths, h0=h0,
                         master_seed=seed).validate()
    assert parse_config(dump_config(c)) == c
