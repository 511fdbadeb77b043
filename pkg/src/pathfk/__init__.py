"""Simulation of coupled forward-backward systems driven by two independent
Brownian motions, and verification of the induced path-field identities."""

from .errors import (BudgetError, GridAlignmentError, PreconditionError,
                     SolverError)
from .paths import (Path, PathDistance, discretize, from_csv, from_json,
                    horizontal_extend, make_grid, path_dist, restrict,
                    sup_norm, to_csv, to_json, value_at, vertical_bump)
from .calculus import (DerivativeEstimate, PathFunctional, SmoothMap,
                       backward_ito_residual, functional_ito_residual,
                       horizontal_derivative, vertical_derivative,
                       vertical_hessian)
from .simulation import (BrownianPair, ScenarioEnsemble, backward_integral,
                         forward_integral, load_ensemble, moment_check,
                         random_initial_path, sample_drivers, save_ensemble,
                         simulate_forward)
from .models import (Model, ModelRegistryEntry, get_entry, get_model,
                     registry, running_integral, running_max, shifted_model,
                     validate)
from .solver import (BackwardSolution, RegressionBasis, difference_quotient,
                     evaluate_u, frozen_noise_increments, solve_nested,
                     solve_regression)
from .verification import (comparison_check, discretization_convergence_check,
                           discretized_model, field_from_closed_form,
                           field_from_engine, feynman_kac_forward_check,
                           feynman_kac_reverse_check, flow_check,
                           moment_envelope_check, regularity_check,
                           spde_residual,
                           spde_residual_check, z_growth_check,
                           z_representation_check)
from .config import ExperimentConfig, ConfigError, load_config
from .reports import CheckReport

__all__ = [name for name in dir() if not name.startswith("_")]
