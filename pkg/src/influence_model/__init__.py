"""Learning latent influence networks from multi-channel time series.

The package implements the static and switching influence models:
generative sampling, variational E-M inference, an exact small-system
oracle, and the downstream turn-taking prediction and structural-change
detection tasks, plus CSV/JSON ingestion and a command-line front end.
"""

from .model import (
    GaussianEmission,
    GaussianFixedMeans,
    LatentTrajectory,
    ModelParams,
    ModelSpec,
    Multinomial,
    MultinomialEmission,
    ObservationSet,
    ValidationReport,
    Violation,
    emission_likelihoods,
    random_params,
    sample,
    transition_distribution,
    uniform_initial_params,
    validate_params,
)
from .inference import (
    BackwardState,
    DegenerateEvidenceError,
    FitConfig,
    FitReport,
    ForwardState,
    InferenceError,
    NumericalDivergenceError,
    Posteriors,
    backward_pass,
    compute_posteriors,
    fit,
    forward_pass,
    kl_to_reference,
    m_step,
    one_step_state_predictive,
    one_step_symbol_predictive,
)
from .oracle import JointChain, exact_filter, exact_loglik, exact_smooth, expand
from .tasks import (
    ChangeDetectionResult,
    ChangeLabel,
    TurnTakingEvent,
    binarize,
    detect_structural_change,
    expected_influence_matrix,
    extract_turn_events,
    label_change_pair,
    nn_baseline_predict,
    predict_next_speaker,
)

__version__ = "0.1.0"
