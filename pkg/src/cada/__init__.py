"""Certainty-gated attention for adversarial domain adaptation at desk scale.

A small, dependency-light research library: a reverse-mode autodiff tape over
dense float64 arrays, Bayesian classifier/discriminator heads with variance
outputs, MC-dropout predictive uncertainty, certainty-gradient feature
attention, the adversarial training loop that ties them together, synthetic
domain-shift datasets, and evaluation/export utilities.
"""

from .autodiff import (
    Tape,
    Tensor,
    add,
    cross_entropy,
    exp,
    finite_diff_check,
    gradient_reversal,
    log,
    matmul,
    mul,
    relu,
    sigmoid,
    softmax,
    tensor_mean,
    tensor_sum,
)
from .model import (
    DropoutPlan,
    HeadOutput,
    Linear,
    ParamGroups,
    classifier_forward,
    discriminator_forward,
    feature_extract,
    infer_class_logits,
    infer_features,
    init_params,
    load_checkpoint,
    sample_dropout_plans,
    save_checkpoint,
)
from .uncertainty import (
    PREDICTIVE_CEILING,
    UncertaintyEstimate,
    aleatoric_loss,
    binary_entropy,
    predictive_uncertainty,
    predictive_uncertainty_from_plans,
)
from .attention import (
    AttentionResult,
    aleatoric_attention,
    apply_attention,
    attention_weights,
    certainty_gradient,
    predictive_attention,
)
from .data import (
    AdaptationDataset,
    Batch,
    load_csv,
    make_shifted_blobs,
    make_two_moons,
    save_csv,
)
from .training import (
    TrainConfig,
    TrainHistory,
    lambda_schedule,
    total_objective,
    train,
    train_step,
)
from .evaluation import (
    MetricsReport,
    accuracy,
    domain_probe_error,
    export_reports,
    proxy_a_distance,
)

__version__ = "0.1.0"
