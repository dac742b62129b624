import math

import numpy as np
import pytest

from shrinkball.errors import ConfigError
from shrinkball.models import (MODELS, OBSERVABLES, PathGrid, SdeModel, constant_model,
                               diffusivity_probe, get_model, get_observable, jacobian_error,
                               linear_observable, probe_points, rotation)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_catalog_models_pass_probe(name):
    m = get_model(name)
    assert diffusivity_probe(m.diffusion, m.initial) > 0
    assert m.sigma_max > 0


def test_unknown_ids_name_the_field():
    with pytest.raises(ConfigError, match="model"):
        get_model("nope")
    with pytest.raises(ConfigError, match="observable"):
        get_observable("nope", 1)
    with pytest.raises(ConfigError):
        get_observable("trig_mix", 1)


def test_wrong_initial_dimension():
    with pytest.raises(ConfigError):
        SdeModel("bad", 2, lambda y: y, lambda y: y[..., None] * np.eye(2), np.zeros(3))


def test_sigma_max_of_rotation_is_one():
    assert get_model("rotbm2").sigma_max == pytest.approx(1.0, abs=1e-12)
    # diag(1 + y1^2/(1 + y1^2), 1) on the unit ball peaks at 1.5
    assert 1.4 < get_model("diag2").sigma_max <= 1.5 + 1e-12


def test_probe_points_inside_ball():
    for d in (1, 2, 3):
        pts = probe_points(np.ones(d), 0.5, 200)
        assert np.all(np.linalg.norm(pts - 1, axis=1) <= 0.5 + 1e-12)


@pytest.mark.parametrize("name", sorted(OBSERVABLES))
@pytest.mark.parametrize("d", [1, 2])
def test_analytic_jacobians_match_finite_differences(name, d):
    if name == "trig_mix" and d != 2:
        pytest.skip("trig_mix is two-dimensional")
    obs = get_observable(name, d)
    assert jacobian_error(obs, np.zeros(d)) <= 1e-5


def test_fd_jacobian_without_analytic_form():
    from shrinkball.models import Observable
    obs = Observable("cube", 1, lambda y: y ** 3)
    assert obs.jacobian(np.array([[2.0]]))[0, 0, 0] == pytest.approx(12.0, rel=1e-8)


def test_hessians_of_exp_minus_one():
    obs = get_observable("exp_minus_one", 2)
    y = np.array([[0.3, -0.2]])
    assert obs.hessians[0](y)[0, 0, 0] == pytest.approx(math.exp(0.3))
    assert obs.hessians[1](y)[0, 0, 0] == 0.0


def test_linear_observable_flagged():
    assert linear_observable(np.eye(2)).linear
    assert get_observable("weighted_sum", 3).linear
    assert not get_observable("exp_minus_one", 1).linear


def test_rotation_is_orthogonal():
    r = rotation(math.pi / 6)
    assert np.allclose(r @ r.T, np.eye(2))


def test_constant_model_rejects_non_square():
    with pytest.raises(ConfigError):
        constant_model(np.ones((2, 3)))


def test_path_grid_lookup_is_previous_point():
    g = PathGrid([0.0, 0.5, 1.0], [[0.0], [1.0], [2.0]])
    assert g.value_at(0.49)[0] == 0.0
    assert g.value_at(0.5)[0] == 1.0
    assert g.value_at(7.0)[0] == 2.0


@pytest.mark.parametrize("times", [[0.1, 0.2], [0.0, 0.0], [0.0, 0.3, 0.2]])
def test_path_grid_validation(times):
    from shrinkball.errors import DomainError
    with pytest.raises(DomainError):
        PathGrid(times, np.zeros((len(times), 1)))
