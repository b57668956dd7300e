"""castlelab: simulation and verification lab for ballistic deposition,
coalescing Brownian paths and the Brownian castle."""

from ._kernels import LANE as kernel_lane

__version__ = "0.1.0"
__all__ = ["kernel_lane", "__version__"]
