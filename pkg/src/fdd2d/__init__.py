"""Full-duplex D2D channel and power allocation: scenarios, exhaustive labels, neural allocators."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .config import ScenarioConfig, load_config
from .rates import Allocation, RateReport, evaluate

__all__ = ["BACKEND", "Allocation", "RateReport", "ScenarioConfig", "evaluate", "load_config"]
