"""Multi-frame interpolation for angiography sequences built on scoped lambda attention."""

from .config import Config, toy_config
from .warp_refine import init_model, interpolate

__version__ = "0.1.0"

__all__ = ["Config", "toy_config", "init_model", "interpolate", "__version__"]
