"""Collision-aware next-best-view planning over growing point clouds.

Geometry core, a synthetic scene oracle that stands in for learned view
synthesis, a forward Gaussian-splat renderer, depth calibration and
reconstruction metrics.
"""

from nbvkit.errors import DegenerateInputError, DomainError, NumericalDomainError

__version__ = "0.1.0"

__all__ = ["DomainError", "DegenerateInputError", "NumericalDomainError", "__version__"]
