"""Interior texture synthesis for 3D Gaussian splat models.

Fills hollow interiors with opaque atomic particles, trains their colors
against cross-section reference views, smooths what training never touched,
and renders arbitrary cut planes with no further optimization.
"""
from ._kernels import BACKEND_NAME

__version__ = "0.1.0"
__all__ = ["BACKEND_NAME", "__version__"]
