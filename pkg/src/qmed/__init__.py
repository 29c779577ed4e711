"""u-specific mediation effects from quantile-binned microdata.

Mediator quantile regression, rank-based outcome binning, a three-factor
decomposition of the indirect effect, bag-of-little-bootstraps bands, and a
closed-form normal/exponential oracle for checking all of it.
"""
__version__ = "0.1.0"

from .blb import BLBConfig, ConfidenceBand, blb_estimate
from .data import (CovariateProfile, MicrodataTable, ObservationRecord, Schema, covariate_profiles, ingest_csv,
                   split_by_exposure, write_csv)
from .effects import EffectCurve, average_over_u, decompose_nie, integrate_over_profiles, u_specific_effects
from .errors import (AggregationError, DegenerateArmError, EstimationError, ExtrapolationError, InferenceError,
                     QmedError, SchemaError, ValidationError)
from .mediator import MediatorModel, conditional_quantile, quantile_effect, rank_transform
from .oracle import OracleModel, closed_forms, simulate, tilde_x_star
from .outcome import QuantileBinning, RateCurve, assign_bins, rate_curve, sensitivity_r, sensitivity_tilde
from .pipeline import EstimationConfig, FitResult, estimate_effects, fit_pipeline
from .quantreg import DesignSpec, QuantileFit, fit_quantile, fit_quantile_grid, fit_sample_quantiles
from .sparsity import SparsityEstimate, bofinger_bandwidth, density_factor_tilde, sparsity_at
