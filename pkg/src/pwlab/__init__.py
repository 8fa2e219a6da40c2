"""Potential-well laboratory for u_t - Delta u = |u|^{p-1} u with Dirichlet data."""

from .comparison import ComparisonReport, gronwall_diagnostic, run_comparison
from .flow import (FlowConfig, FlowOutcome, Trajectory, omega_limit_check, run_flow, step_imex,
                   verify_blowup_ode, verify_dissipation_identity, verify_mass_identity)
from .functionals import (FunctionalReport, Params, delta_functionals, energy_E_lambda, energy_J,
                          mass_M, nehari_I, quotient_A, report)
from .mesh import (GridFunction, Mesh, apply_laplacian, build_mesh, grad_norm_sq, inner_l2,
                   integrate_power, read_snapshot, write_snapshot)
from .nehari import (DepthTable, SetMembership, WellDepths, classify, compute_depth_table,
                     depth_d_lambda, depth_from_A, epsilon_budget, ground_state, nehari_scale)

__version__ = "0.1.0"
