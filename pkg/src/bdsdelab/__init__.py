"""Monte Carlo and spectral laboratory for semilinear SPDEs driven by
backward stochastic noise, solved through their backward doubly stochastic
(BDSDE) representation and cross-validated against mild spectral solutions."""

from .coefficients import CoefficientSpec, make_driver, make_gtilde, make_terminal
from .domains import DomainSpec
from .energy import (bform_norm, energy_af, energy_estimate_sides,
                     energy_identity_sides, energy_n_closed, eqe1_sides,
                     mt_cells, richardson)
from .errors import (ConfigurationError, NonConvergenceError,
                     NumericalFailureError, UnsupportedConfigurationError)
from .field import FieldEstimate, feynman_kac_field, nemytskii_driver
from .generators import GeneratorSpec, drift_from_divergence_form, make_generator
from .grids import TimeGrid
from .noise import (BackwardNoise, QSpec, backward_ito, forward_ito,
                    g_components, reverse_noise, sample_backward_noise,
                    validate_qspec)
from .paths import (PathEnsemble, dual_resolvent_one, resolvent_mc,
                    simulate_paths)
from .regression import RegressionConfig, regress_conditional
from .solver import (BdsdeSolution, apriori_sides, comparison_report,
                     inf_convolution, infconv_certificate, residual_check,
                     solve_linear, solve_lipschitz_picard, solve_monotone,
                     solve_with_gradient)
from .spectral import (MildSolution, SpectralBasis, mild_residual,
                       semigroup_apply, solve_mild, spectral_gradient,
                       time_reversal_check)

__version__ = "0.1.0"
