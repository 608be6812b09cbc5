"""Axially symmetric vector random fields on the sphere.

Covariance models built from longitudinal Fourier series, their numerical
validation, Gaussian simulation and Monte Carlo recovery.
"""

__version__ = "0.1.0"

from .core import (KernelError, ProductGrid, RandomStream, SeedSpec, angle_difference,
                   build_grid, derive_stream)
from .covariance import (Configuration, CovarianceModel, PsdReport, closed_form_model,
                         constant_model, eval_series_covariance, extract_fourier_coefficients,
                         gram_matrix, psd_check, reversibility_diagnostic, series_model,
                         symmetrize, symmetry_diagnostic, thm7_check)
from .estimate import (EnsembleStats, empirical_covariance, gaussianity_test,
                       projection_variance_test, reversibility_test)
from .kernels import (AffineLatFunction, CoefficientFamily, MatrixKernel, cosh_closed_form,
                      log_closed_form, make_cosh_family, make_lambda_family, make_log_family,
                      make_poisson_family, make_separable_time, poisson_closed_form,
                      table_family)
from .simulate import (FieldEnsemble, SimulationPlan, assemble_coefficient_covariance,
                       cholesky_with_jitter, project_onto_harmonic,
                       sample_coefficient_processes, synthesize_field)
