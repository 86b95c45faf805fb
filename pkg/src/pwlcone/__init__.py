"""Invariant cones and reduced-order models of piecewise-linear oscillators."""
from __future__ import annotations

__version__ = "0.1.0"
