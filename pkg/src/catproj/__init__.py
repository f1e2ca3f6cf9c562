"""Alternating projections and regularity certificates in constant-curvature spaces."""

__version__ = "0.1.0"
