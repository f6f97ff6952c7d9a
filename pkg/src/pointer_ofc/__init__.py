"""Second-order-lag LQR models of mouse pointing movements.

Core entry points::

    from pointer_ofc import ModelParams, build_dynamics, augment_system, build_cost
    from pointer_ofc import solve_riccati, simulate_lqr, fit_trial
"""
from .errors import (DomainError, FitFailure, InvalidArgument, NoSurgeError, NumericalFailure,
                     RecordingError)
from .fitting import (MODELS, FitConfig, FitResult, filter_outlier_fits, fit_trial, lsq_solve,
                      max_error, sse)
from .lqr import (GainSchedule, brute_force_oracle, optimal_cost, rollout_open_loop,
                  simulate_lqr, solve_riccati)
from .model import (AugmentedSystem, CostSpec, DynamicsMatrices, ModelParams, TaskSpec,
                    Trajectory, Variant, augment_system, build_cost, build_dynamics,
                    evaluate_cost, initial_control, jerk_weight_f)
from .reference import (MinJerkCoefficients, detect_surge_end, minjerk_coefficients,
                        minjerk_trajectory, simulate_2ol_eq)

__version__ = "0.1.0"
