"""LSTD-family value-function estimators for finite Markov reward processes."""

from ._kernels import backend
from .estimators import (
    LstdSystem,
    WeightEstimate,
    brm_design,
    brm_sample,
    design_system,
    episodic_lstd,
    episodic_lstd_design,
    lds_model,
    lds_sample,
    lds_solve,
    lstd_design,
    lstd_pinv,
    lstd_sample,
    quadratic_form_k,
    sample_system,
    td_iterate_design,
    td_iterate_sample,
)
from .exceptions import (
    ConfigError,
    InvalidModel,
    MaxItersExceeded,
    MissingAltSample,
    SingularCross,
    SingularGram,
    SingularSystem,
    Unsupported,
)
from .mrp import (
    EpisodeBatch,
    EpisodicMrp,
    FeatureMap,
    Mrp,
    RewardNoise,
    StationaryWeights,
    Trajectory,
    episodic_matrices,
    exact_value,
    recurrent_classes,
    sample_episodes,
    sample_trajectory,
    stationary_weights,
)
from .projections import oblique_projection, reduced_rank_regression, weighted_projection
from .regularizers import RegularizationSpec, apply_regularizer

__version__ = "0.1.0"
