"""Lyapunov-based boundary feedback for linear hyperbolic balance laws."""
from .boundary import (
    BoundaryPartition,
    ControlSignal,
    control_gain,
    outflow_functional,
    partition_boundary,
    synthesize_control,
    verify_control,
)
from .core import CoefficientSet, Scenario, StateField, StructuredGrid, build_grid, random_smooth_state
from .dissipativity import build_dissipation, check_dissipativity, jacobi_eigenvalues
from .errors import (
    ConfigError,
    ControlInfeasibleError,
    DissipativityError,
    HypstabError,
    InstabilityError,
    NoControlAuthorityError,
    NonCharacteristicError,
    UnsolvableGeometryError,
    ValidationError,
    WeightError,
)
from .hamjac import (
    HamiltonianSpec,
    gradient_consistency_check,
    linearize_hamiltonian,
    scenario_constant_gradient,
    scenario_potential_flow,
    scenario_separable,
)
from .lyapunov import LyapunovTrace, fit_decay_rate, lyapunov_value
from .scenarios import ControlConfig, scenario_custom, validate_scenario
from .solver import apply_boundary, cfl_dt, run, step
from .weights import (
    WeightField,
    solve_weight_characteristics,
    solve_weight_constant,
    solve_weight_separable,
    weight_residual,
)

__version__ = "0.1.0"
