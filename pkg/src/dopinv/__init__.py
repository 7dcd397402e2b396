"""Inverse doping-profile toolkit.

Stationary drift-diffusion device model on the unit square with a
partial measurement contact: forward current maps, equilibrium solves,
conductivity reconstruction by a cyclic adjoint-gradient iteration,
doping recovery, and the one-dimensional LBIC identification problem.
"""

__version__ = "0.1.0"

from .mesh import GAMMA1, GeometryConfig, Mesh, build_unit_square
from .fem import (
    FluxTrace,
    MixedBvp,
    CoupledBvp,
    SolverError,
    boundary_flux,
    solve_mixed_bvp,
    solve_coupled_bvp,
)
from .device import (
    NewtonError,
    PhysicalParameters,
    RecombinationModel,
    ScaledParameters,
    scale_parameters,
    solve_equilibrium,
    zsc_conductivity,
    zsc_doping,
)
from .forward import (
    InputProfile,
    MeasurementSet,
    equally_spaced_profiles,
    restrict_trace,
    synthesize_dataset,
    unipolar_forward,
)
from .inversion import (
    ReconstructionConfig,
    ReconstructionResult,
    adjoint_gradient,
    recover_doping,
    run_reconstruction,
)
from .lbic1d import (
    Lbic1dParameters,
    LbicCurve,
    attainability_report,
    family_member,
    fit_constants,
    forward_currents,
    reconstruct_potential,
)

__all__ = [
    "GAMMA1",
    "GeometryConfig",
    "Mesh",
    "build_unit_square",
    "FluxTrace",
    "MixedBvp",
    "CoupledBvp",
    "SolverError",
    "boundary_flux",
    "solve_mixed_bvp",
    "solve_coupled_bvp",
    "NewtonError",
    "PhysicalParameters",
    "RecombinationModel",
    "ScaledParameters",
    "scale_parameters",
    "solve_equilibrium",
    "zsc_conductivity",
    "zsc_doping",
    "InputProfile",
    "MeasurementSet",
    "equally_spaced_profiles",
    "restrict_trace",
    "synthesize_dataset",
    "unipolar_forward",
    "ReconstructionConfig",
    "ReconstructionResult",
    "adjoint_gradient",
    "recover_doping",
    "run_reconstruction",
    "Lbic1dParameters",
    "LbicCurve",
    "attainability_report",
    "family_member",
    "fit_constants",
    "forward_currents",
    "reconstruct_potential",
    "__version__",
]
