"""Uncertainty: aleatoric loss attenuation and MC-dropout predictive variance.

The aleatoric loss corrupts logits with learned-scale Gaussian noise T times
and averages the true-class softmax probability before taking -log, so a
confident head (sigma -> 0) recovers plain cross-entropy exactly and a noisy
head pays a spread penalty instead of the full miss.

Predictive uncertainty runs the discriminator under T dropout plans and
averages per-pass (variance head + 2-class predictive entropy); the MC terms
are accumulated by plan index, never by arrival order, so the result is
deterministic.  Its ceiling is 1 + ln 2 (variance head < 1, entropy <= ln 2),
which normalizes it onto [0, 1) for use as a certainty gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as md

PREDICTIVE_CEILING = 1.0 + math.log(2.0)


@dataclass
class UncertaintyEstimate:
    """Per-sample decomposition: predictive = aleatoric + entropy."""

    aleatoric: np.ndarray  # mean over MC passes of the variance head
    entropy: np.ndarray  # nats; mean per-pass entropy (or entropy of mean)
    predictive: np.ndarray
    predictive_norm: np.ndarray  # predictive / (1 + ln 2), in [0, 1)


def binary_entropy(probs):
    """Entropy in nats of a 2-class probability vector; 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError(f"expected a probability vector of length 2, got shape {p.shape}")
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {p}")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def _entropy_rows(probs):
    safe = np.where(probs > 0.0, probs, 1.0)
    return -(probs * np.log(safe)).sum(axis=-1)


def _one_hot(labels, k):
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    hot = np.zeros((labels.size, k))
    hot[np.arange(labels.size), labels] = 1.0
    return hot


def aleatoric_loss(logits, sigma, labels, mc_samples, noise):
    """Noise-attenuated classification loss (scalar tensor).

    ``logits`` is an (n, k) tensor, ``sigma`` an (n, 1) tensor of learned
    noise scales, ``noise`` a constant (mc_samples, n, k) standard-normal
    draw.  Also accepts a single 1-D logit vector with a scalar label and
    (mc_samples, k) noise.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    lv = logits.values
    single = lv.ndim == 1
    k = lv.shape[-1]
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (mc_samples,) + lv.shape:
        raise ValueError(
            f"noise shape {noise.shape} does not match ({mc_samples},) + {lv.shape}"
        )
    if np.any(sigma.values < 0.0):
        raise ValueError("sigma must be non-negative")
    hot = _one_hot(labels, k)
    hot = hot[0] if single else hot
    axis = -1
    acc = None
    for t in range(mc_samples):
        corrupted = ad.add(logits, ad.mul(sigma, noise[t]))
        probs = ad.softmax(corrupted, axis=axis)
        picked = ad.tensor_sum(ad.mul(probs, hot), axis=axis)
        acc = picked if acc is None else ad.add(acc, picked)
    averaged = ad.mul(acc, 1.0 / mc_samples)
    return ad.tensor_mean(ad.mul(ad.log(averaged), -1.0))


def _entropy_graph(logits):
    """Per-row entropy of softmax(logits) on the tape, via the logsumexp form."""
    lv = logits.values
    shift = lv.max(axis=-1, keepdims=True)  # constant; detaching it is exact
    z = ad.tensor_sum(ad.exp(ad.add(logits, -shift)), axis=-1)
    lse = ad.add(ad.log(z), shift[..., 0])
    weighted = ad.tensor_sum(ad.mul(ad.softmax(logits, axis=-1), logits), axis=-1)
    return ad.add(lse, ad.mul(weighted, -1.0))


def predictive_variance_graph(tape, f, params, plans, entropy_of_mean=False):
    """Per-sample predictive variance of the discriminator, on the tape.

    Returns (predictive, aleatoric_mean, entropy_term), each an (n,) tensor.
    The graph stays differentiable through all ``plans`` so the attention pass
    can take its gradient w.r.t. ``f``.
    """
    if not plans:
        raise ValueError("need at least one dropout plan")
    count = len(plans)
    var_acc = None
    ent_acc = None
    prob_acc = None
    for plan in plans:
        head = md.discriminator_forward(tape, f, params, plan=plan, grl_strength=None)
        v = ad.tensor_sum(head.var, axis=-1)  # (n, 1) -> (n,)
        var_acc = v if var_acc is None else ad.add(var_acc, v)
        if entropy_of_mean:
            probs = ad.softmax(head.logits, axis=-1)
            prob_acc = probs if prob_acc is None else ad.add(prob_acc, probs)
        else:
            h = _entropy_graph(head.logits)
            ent_acc = h if ent_acc is None else ad.add(ent_acc, h)
    aleatoric = ad.mul(var_acc, 1.0 / count)
    if entropy_of_mean:
        mean_probs = ad.mul(prob_acc, 1.0 / count)
        entropy = ad.mul(
            ad.tensor_sum(ad.mul(mean_probs, ad.log(mean_probs)), axis=-1), -1.0
        )
    else:
        entropy = ad.mul(ent_acc, 1.0 / count)
    return ad.add(aleatoric, entropy), aleatoric, entropy


def predictive_uncertainty_from_plans(features, params, plans, entropy_of_mean=False):
    """Estimate from explicit dropout plans (detached numbers)."""
    tape = ad.Tape()
    f = tape.leaf(np.asarray(features, dtype=np.float64))
    predictive, aleatoric, entropy = predictive_variance_graph(
        tape, f, params, plans, entropy_of_mean=entropy_of_mean
    )
    return UncertaintyEstimate(
        aleatoric=aleatoric.values,
        entropy=entropy.values,
        predictive=predictive.values,
        predictive_norm=predictive.values / PREDICTIVE_CEILING,
    )


def predictive_uncertainty(features, params, mc_samples, rng, dropout_rate=0.5,
                           entropy_of_mean=False):
    """MC-dropout predictive uncertainty of the discriminator per sample."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    widths = [layer.weight.shape[1] for layer in params.discriminator_trunk]
    plans = md.sample_dropout_plans(dropout_rate, widths, mc_samples, rng)
    return predictive_uncertainty_from_plans(
        features, params, plans, entropy_of_mean=entropy_of_mean
    )
