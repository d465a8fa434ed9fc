"""Doubly robust estimation for nested trials with sub-sampling of non-randomized individuals."""

from .data import (
    CohortDataset,
    ColumnSpec,
    SubsamplingDesign,
    load_csv,
    mask_by_subsampling,
    save_csv,
    summarize,
)
from .estimator import (
    EstimateResult,
    InfluenceCurve,
    analyze,
    avar_components,
    bootstrap,
    contrast,
    estimate_psi,
    estimate_psi_nosub,
    ic_standard_error,
    wald_ci,
)
from .glm import DesignSpec, FittedGlm, fit, predict_mean
from .nuisance import (
    FixedNuisance,
    NuisanceConfig,
    NuisanceSet,
    NuisanceValues,
    fit_nuisance,
    fit_outcome,
    fit_participation,
    fit_pseudo_outcome,
    fit_sampling,
    fit_treatment,
)

__version__ = "0.1.0"
