"""Compact vision-language-action policy trained by flow matching."""
from .config import RunConfig, load_config
from .estimator import FlowVLAPolicy
from .model import VLAModel, count_params

__version__ = "0.1.0"

__all__ = ["FlowVLAPolicy", "RunConfig", "VLAModel", "count_params", "load_config"]
