"""Witten-Laplacian heat-kernel toolkit on flat R^n / C^n with polynomial potentials."""

__version__ = "0.1.0"

from .poly_core import MultiPoly, parse_poly  # noqa: F401
