"""holokit: a numerical laboratory for Kobayashi geometry, boundary dynamics
and canonical models on the ball and on bounded convex domains.

All distances use the curvature -1 normalization k_D(0,t) = log((1+t)/(1-t));
see :data:`holokit.ball.NORMALIZATION_BANNER`.
"""

from .ball import NORMALIZATION_BANNER

__version__ = "0.1.0"
__all__ = ["NORMALIZATION_BANNER", "__version__"]
