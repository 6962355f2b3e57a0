"""Bulk-surface Cahn-Hilliard finite-element simulator and verification suite."""

from .assembly import BulkSurfacePair, CouplingParams, FemOperators, assemble
from .mesh import Mesh, generate_unit_square, load_mesh, save_mesh
from .potentials import PotentialSpec, YosidaParams
from .stepper import (
    ConstantMobility,
    QuadraticMobility,
    State,
    StepperConfig,
    TimeStepper,
    Trajectory,
)
from .velocity import (
    StreamFunctionVelocity,
    SurfaceSlipVelocity,
    ZeroVelocity,
    mollify_in_time,
)

__all__ = [
    "BulkSurfacePair",
    "ConstantMobility",
    "CouplingParams",
    "FemOperators",
    "Mesh",
    "PotentialSpec",
    "QuadraticMobility",
    "State",
    "StepperConfig",
    "StreamFunctionVelocity",
    "SurfaceSlipVelocity",
    "TimeStepper",
    "Trajectory",
    "YosidaParams",
    "ZeroVelocity",
    "assemble",
    "generate_unit_square",
    "load_mesh",
    "mollify_in_time",
    "save_mesh",
]

__version__ = "0.1.0"
