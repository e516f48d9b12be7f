"""From-scratch UNET / Stacked-UNET classifiers for 5-grade DR screening."""

__version__ = "0.1.0"

from .model import UNetConfig, build_stacked_unet, build_unet  # noqa: F401
from .training import TrainConfig, evaluate, train  # noqa: F401
