"""Digital twin of a tendon-driven soft gripper for berry harvesting.

Kernels in :mod:`berrygrip.kernels` are numba-compiled when numba imports and
``BERRYGRIP_DISABLE_NUMBA`` is unset; otherwise a vectorised numpy path runs.
Both give bit-identical results.
"""
from ._accel import backend
from .config import GripperConfig, load_config
from .experiments import ExperimentSpec, run_experiment

__version__ = "0.1.0"
__all__ = ["GripperConfig", "ExperimentSpec", "backend", "load_config", "run_experiment"]
