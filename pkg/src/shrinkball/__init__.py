"""Monte Carlo laboratory for Ito diffusions stopped at their first exit
from balls of radius ``n^{-1/2}``.

The simulation kernels live in a compiled extension when it is built and
fall back to numpy otherwise; see :mod:`shrinkball.backend`.
"""

__version__ = "0.1.0"

from .backend import AVAILABLE as BACKENDS  # noqa: E402
from .engine import (simulate_coupled, simulate_exits, simulate_grids,  # noqa: E402
                     simulate_on_grid, simulate_until_exit)
from .exits import ExitRecord, detect_exit  # noqa: E402
from .models import Observable, PathGrid, SdeModel, get_model, get_observable  # noqa: E402
from .rng import StreamKey  # noqa: E402

__all__ = [
    "BACKENDS",
    "ExitRecord",
    "Observable",
    "PathGrid",
    "SdeModel",
    "StreamKey",
    "detect_exit",
    "get_model",
    "get_observable",
    "simulate_coupled",
    "simulate_exits",
    "simulate_grids",
    "simulate_on_grid",
    "simulate_until_exit",
]
