"""conefrac - implicit cohesive fracture with a conic interior-point solver."""

__version__ = "0.1.0"
__author__ = "conefrac developers"
