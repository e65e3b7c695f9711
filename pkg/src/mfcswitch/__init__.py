"""Constrained mean-field switching control.

A continuum of agents moves on [0, 1] along a mode-dependent drift and
jumps between finitely many modes at a controlled rate, subject to caps on
the mass present in each mode.  The package solves the backward value
equation, the forward density equation and the outer multiplier problem,
and certifies the result through the duality gap and optimality residuals.
"""

from .diagnostics import (
    SolveReport,
    duality_gap,
    kinetic_gamma,
    kkt_residuals,
    primal_cost,
    running_cost_L,
)
from .dualopt import DualConfig, DualState, dual_objective, lambda_mass_bound, mollify, solve_dual, subgradient
from .exceptions import (
    DeltaTooSmall,
    InfeasibleControl,
    MFCError,
    NoConvergence,
    ScenarioDomainError,
    ScenarioError,
    ScenarioParseError,
    ScenarioSchemaError,
    TooLarge,
    UnknownPreset,
)
from .flow import FlowQuery, advect, check_flow_identities, flow_space_derivative
from .fokker_planck import ControlField, DensityField, control_from_value, mode_mass, reaction_matrix, solve_fp
from .hjb import (
    HJBConfig,
    MultiplierPath,
    ValueField,
    comparison_check,
    gamma_map,
    hamiltonian,
    hjb_constants,
    picard_solve,
    truncate,
)
from .scenario import GridSpec, ModeSet, Scenario, load_scenario, preset, save_scenario, validate_scenario

__version__ = "0.1.0"
