"""Dynamical localization laboratory for random lattice Schrodinger operators."""
from __future__ import annotations

__version__ = "0.1.0"
