"""
cacc-lab: safe, energy-aware cooperative adaptive cruise control
"""
from . import parameters
from . import dynamics
from . import powertrain
from . import fitting
from . import polytopes
from . import invariant
from . import v2v
from . import controller
from . import scenarios

__all__ = [
    "controller",
    "dynamics",
    "fitting",
    "invariant",
    "parameters",
    "polytopes",
    "powertrain",
    "scenarios",
    "v2v",
]
