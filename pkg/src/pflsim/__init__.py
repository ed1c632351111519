"""Desk-scale simulator of differentially private federated learning.

Clients train with per-example gradient clipping and Gaussian noise, a
server averages their parameters each round, and an analytic accountant
tracks the (epsilon, delta) budget. Sweep drivers reproduce the two
qualitative effects the simulator exists to study: one local epoch per
round beats longer local training for a fixed epoch budget, and accuracy
improves with the number of participating clients.
"""

from .analysis import (
    DegradationConfig,
    DegradationReport,
    SweepResult,
    SweepRow,
    UtilityBound,
    degradation_upper_bound,
    paired_degradation,
    sweep_clients,
    sweep_epochs,
    utility_lower_bound,
)
from .config import ExperimentConfig, load_config, parse_config, prepare
from .core import RngStream, expected_gaussian_norm, gaussian_vector, l2_norm, log_gamma
from .data import Dataset, FeatureSpec, apply_features, load_idx, save_idx, synth_blobs
from .federation import (
    ClientState,
    PflResult,
    RoundRecord,
    Schedule,
    fed_avg,
    local_train,
    partition_iid,
    run_pfl,
)
from .models import (
    Activation,
    Example,
    EvalResult,
    ModelSpec,
    evaluate,
    forward,
    init_params,
    loss,
    param_count,
    per_sample_gradient,
    per_sample_gradients,
    predict,
    tempered_sigmoid,
)
from .privacy import (
    AccountantConfig,
    NoiseSpec,
    PrivacyBudget,
    achieved_epsilon,
    calibrate_sigma,
    clip_gradient,
    dp_sgd_step,
    intermediate_epsilon,
    parallel_compose,
)

__version__ = "0.1.0"
