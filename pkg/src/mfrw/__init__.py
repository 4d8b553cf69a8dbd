"""Synthesis and inference for multifractal fractional random walks."""

from .cascade import (LogField, MeasureGrid, coarsen_measure, field_to_measure,
                      sample_omega, synth_log_field, synth_measure)
from .errors import (ConditionRefused, DataError, DegenerateDataError, DomainError,
                     InvalidConfigError, MFRWError, NumericalError, SynthesisError)
from .process import (ConditionalCovariance, FbmKernel, PathSample,
                      build_conditional_covariance, cell_kernel_integral,
                      coarsen_covariance, increment_scales, integral_increments,
                      sample_conditional_paths, synth_fgn_exact, synth_mfrw,
                      synth_subordinated)
from .scaling import (CascadeConfig, ConditionReport, ScalingModel, check_conditions,
                      delta_m, omega_law, psi, rho_l, zeta)
from .variations import (HermiteExpansion, StructureFunctionTable, ZetaEstimate,
                         b_statistic, estimate_zeta, gamma_n, gamma_total,
                         gaussian_abs_moment, hermite_coeffs, structure_function,
                         z_statistic)

__version__ = "0.1.0"
