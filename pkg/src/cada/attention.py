"""Certainty-gradient feature attention.

The discriminator's uncertainty is differentiated w.r.t. the features; the
negated gradient says which feature directions *reduce* domain uncertainty,
i.e. carry certain (transferable-looking) evidence.  Features are scored by
the product of value and that gradient, features whose product is negative
are pushed to (numerically exact) zero softmax weight by a large masking
constant, and the resulting distribution is gated by per-sample certainty
before residually re-weighting the features.

Attention weights are always detached: training gradients flow through the
explicit feature factor of h = f * (1 + w) only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import uncertainty as un

VARIANT_TAGS = ("aleatoric", "predictive")


@dataclass
class AttentionResult:
    """Detached per-sample attention quantities."""

    product: np.ndarray  # feature value times negated uncertainty gradient
    scores: np.ndarray  # masked scores fed to the softmax
    weights: np.ndarray  # certainty-gated softmax, in [0, 1]
    weighted_features: np.ndarray  # f * (1 + weights)
    certainty: np.ndarray  # per-sample gate in [0, 1]
    variant: str


def certainty_gradient(f, uncertainty):
    """Detached -d(uncertainty)/d(features) for a scalar uncertainty tensor."""
    if not isinstance(uncertainty, ad.Tensor) or uncertainty.values.size != 1:
        raise ValueError("uncertainty must be a scalar tensor")
    if not isinstance(f, ad.Tensor) or f.tape is None or f.tape is not uncertainty.tape:
        raise ValueError("features and uncertainty must live on the same tape")
    if not f.tape.depends_on(uncertainty, f):
        raise ValueError("uncertainty is not a function of the features")
    f.tape.backward(uncertainty)
    return -f.tape.grad(f)


def attention_weights(features, grad, certainty, masking_constant):
    """Score, mask, normalize, and gate; accepts one sample (1-D) or a batch."""
    f = np.asarray(features, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if f.shape != g.shape:
        raise ValueError(f"feature/gradient shape mismatch: {f.shape} vs {g.shape}")
    if not masking_constant >= 1.0:
        raise ValueError(f"masking constant must be >= 1, got {masking_constant}")
    single = f.ndim == 1
    f2 = f[None, :] if single else f
    g2 = g[None, :] if single else g
    cert = np.atleast_1d(np.asarray(certainty, dtype=np.float64))
    if cert.shape != (f2.shape[0],):
        raise ValueError(f"certainty shape {cert.shape} does not match batch {f2.shape[0]}")
    if np.any(cert < 0.0) or np.any(cert > 1.0):
        raise ValueError("certainty must lie in [0, 1]")

    product = f2 * g2
    scores = np.maximum(product, 0.0) - masking_constant * np.maximum(-product, 0.0)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    soft = e / e.sum(axis=1, keepdims=True)
    weights = cert[:, None] * soft
    result = AttentionResult(
        product=product,
        scores=scores,
        weights=weights,
        weighted_features=f2 * (1.0 + weights),
        certainty=cert,
        variant="",
    )
    if single:
        result.product = result.product[0]
        result.scores = result.scores[0]
        result.weights = result.weights[0]
        result.weighted_features = result.weighted_features[0]
    return result


def apply_attention(f, weights):
    """h = f * (1 + w) with w constant; gradients flow through f only."""
    weights = np.asarray(weights, dtype=np.float64)
    fv = f.values if isinstance(f, ad.Tensor) else np.asarray(f, dtype=np.float64)
    if weights.shape != fv.shape:
        raise ValueError(f"weights shape {weights.shape} does not match features {fv.shape}")
    if np.any(weights < 0.0) or np.any(weights > 1.0):
        raise ValueError("attention weights must lie in [0, 1]")
    if isinstance(f, ad.Tensor):
        return ad.mul(f, 1.0 + weights)
    return fv * (1.0 + weights)


def aleatoric_attention(f, head, masking_constant):
    """Attention gated by the discriminator's single-pass variance head.

    ``head`` is the discriminator output built on the same tape as ``f``
    without a reversal op.  The batch sum of the variance head is the scalar
    that gets differentiated; since sample i's variance depends only on
    feature row i, the resulting rows are exact per-sample gradients.
    """
    scalar = ad.tensor_sum(head.var)
    grad = certainty_gradient(f, scalar)
    certainty = 1.0 - head.var.values[:, 0]
    result = attention_weights(f.values, grad, certainty, masking_constant)
    result.variant = "aleatoric"
    return result


def predictive_attention(f, params, plans, masking_constant, entropy_of_mean=False):
    """Attention gated by normalized MC-dropout predictive uncertainty.

    The predictive variance is built on ``f``'s tape as one averaged graph
    over the dropout plans, so its feature gradient sees every MC pass.
    """
    if not isinstance(f, ad.Tensor) or f.tape is None:
        raise ValueError("features must be a tensor recorded on a tape")
    predictive, _, _ = un.predictive_variance_graph(
        f.tape, f, params, plans, entropy_of_mean=entropy_of_mean
    )
    scalar = ad.tensor_sum(predictive)
    grad = certainty_gradient(f, scalar)
    certainty = 1.0 - predictive.values / un.PREDICTIVE_CEILING
    result = attention_weights(f.values, grad, certainty, masking_constant)
    result.variant = "predictive"
    return result
