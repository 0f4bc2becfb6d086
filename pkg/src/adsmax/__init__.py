"""adsmax: equivariant harmonic maps between punctured hyperbolic surfaces,
renormalized-energy minimization over Teichmueller space, and the associated
anti-de Sitter circle-bundle constructions."""

__version__ = "0.1.0"

from .hyperbolic import (  # noqa: F401
    Mobius,
    IsometryClass,
    GeodesicLine,
    classify,
    translation_length,
    axis,
    axis_chart,
    dist,
    geodesic_eval,
)
