"""Stationary measures of SDEs driven by Levy noise: simulation, generators, Fokker-Planck."""

__version__ = "0.1.0"

from .errors import ArgumentError, DomainError, NonConvergenceError
from .fokker_planck import (SpectralConfig, chapman_kolmogorov_check, closed_form_ou_density,
                            long_time_limit_check, residual_certificate, solve_stationary_fp,
                            transition_density_kde)
from .generator import (AdjointOperator, TestFunction, apply_adjoint, apply_fractional_laplacian,
                        apply_generator, bump, default_battery, generator_consistency_check)
from .grid import Axis, DensityGrid
from .jumps import NoJumps, QuadratureSpec, StableJumps, UniformJumps
from .lyapunov import (LyapunovSpec, check_drift, check_sandwich, moment_bound, quadratic_spec,
                       verify_ultimate_boundedness)
from .models import get_model
from .noise import BrownianParams, StableParams, char_exponent, decompose_jumps, levy_density, sample_stable_increment
from .sde import (CoefficientSet, MonteCarloConfig, NoiseRealization, cocycle_check, sample_noise, shift_noise,
                  simulate_ensemble, simulate_path)
from .stationary import (EmpiricalMeasure, chebyshev_tail_bound, kb_occupation, stationarity_test,
                         tightness_diagnostic, weak_residual)
