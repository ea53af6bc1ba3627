"""Homogenization toolkit for plywood-like fibrous microstructures."""

from .errors import PlyHomogError
from .kinetics import KineticsSpec, ProductionLaw, ReactionLaw, kinetics_battery
from .laws import AngleLaw, Bump, FieldLaw, RadiusLaw, RateLaw
from .microgeom import Ball, Box, MicrostructureSpec, Phase

__all__ = ["AngleLaw", "Ball", "Box", "Bump", "FieldLaw", "KineticsSpec", "MicrostructureSpec", "Phase",
           "PlyHomogError", "ProductionLaw", "RadiusLaw", "RateLaw", "ReactionLaw", "kinetics_battery"]
__version__ = "0.1.0"
