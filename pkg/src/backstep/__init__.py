"""Backstepping stabilization of an ODE cascaded with a reaction-diffusion rod
that is actuated by a flux jump at an interior point."""

from .analysis import DecayReport, fit_decay_rate, lyapunov_trace, lyapunov_value, open_loop_spectrum
from . import errors
from .gain_synthesis import (LyapunovCertificate, build_certificate, make_phi, mat_exp, phi_eval,
                             phi_prime, pole_place, solve_lyapunov)
from .kernel_solver import k2_eval, kernel_residual, psi, sample_k2, solve_goursat, solve_k1
from .simulator import (SimConfig, SimTrace, compatible_initial_state, simulate_closed_loop,
                        simulate_open_loop, simulate_target)
from .system_model import (CascadeState, Grid, PlantSpec, TargetState, build_grid, norm_H, norm_Y,
                           norm_Z, validate_plant)
from .transform import (GainSet, check_compatibility, feedback_control, forward_transform,
                        inverse_transform, synthesize_gains)

__version__ = "0.1.0"
