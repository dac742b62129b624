import numpy as np
import pytest

from shrinkball import backend
from shrinkball.models import get_model, get_observable

BACKENDS = ["python"] + (["compiled"] if "compiled" in backend.AVAILABLE else [])


@pytest.fixture(params=BACKENDS)
def backend_name(request):
    return request.param


@pytest.fixture
def bm1():
    return get_model("bm1")


@pytest.fixture
def bm2():
    return get_model("bm2")


@pytest.fixture
def expm1():
    return get_observable("exp_minus_one", 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
