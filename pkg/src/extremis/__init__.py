"""Long-term extreme structural response estimation toolkit.

Environmental contours (IFORM and direct sampling), Gaussian-process
sequential sampling and truncated brute-force Monte Carlo, compared
against a configurable synthetic turbine response simulator.
"""
__version__ = "0.1.0"

from ._kernels import get_backend
from .envmodel import Condition, EnvModel, exceedance_probability, load_env_config
from .simulator import SimPreset, simulate_max_response, simulate_timeseries

__all__ = [
    "Condition",
    "EnvModel",
    "SimPreset",
    "__version__",
    "exceedance_probability",
    "get_backend",
    "load_env_config",
    "simulate_max_response",
    "simulate_timeseries",
]
