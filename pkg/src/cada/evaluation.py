"""Evaluation: accuracy, proxy A-distance, and report/export writers.

Inference always uses the plain path (attention off, h = f, dropout off), so
a trained model's accuracy does not depend on which variant produced it.

The proxy A-distance trains a ridge-regularized linear logistic probe to tell
the two feature sets apart (half the rows for fitting, half held out) and maps
the held-out error eps, clamped to [0, 0.5], through 2 * (1 - 2 * eps).
Everything is deterministic given the rng.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from . import attention as at
from . import autodiff as ad
from . import data as dt
from . import model as md
from . import uncertainty as un


def accuracy(params, batch):
    """Fraction of correct argmax predictions; ties break to the lowest class."""
    if len(batch) == 0:
        raise ValueError("cannot score an empty batch")
    if batch.labels is None:
        raise ValueError("accuracy needs a labeled batch")
    logits = md.infer_class_logits(params, batch.features)
    return float((logits.argmax(axis=1) == batch.labels).mean())


def _fit_logistic(x, y, ridge=1e-3):
    """Deterministic L2-regularized logistic regression; returns (w, b)."""
    n, d = x.shape

    def objective(theta):
        w, b = theta[:d], theta[d]
        z = x @ w + b
        # log(1 + exp(-y z)) with y in {-1, +1}, numerically stable
        yz = y * z
        loss = np.logaddexp(0.0, -yz).mean() + 0.5 * ridge * (w @ w)
        p = expit(-yz)
        grad_z = -(y * p) / n
        return loss, np.concatenate([x.T @ grad_z + ridge * w, [grad_z.sum()]])

    result = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                      options={"maxiter": 500})
    return result.x[:d], result.x[d]


def domain_probe_error(source_features, target_features, rng):
    """Held-out error of a linear probe separating the two feature sets."""
    xs = np.asarray(source_features, dtype=np.float64)
    xt = np.asarray(target_features, dtype=np.float64)
    if xs.ndim != 2 or xt.ndim != 2 or xs.shape[1] != xt.shape[1]:
        raise ValueError("feature sets must be 2-D with matching dimensions")
    if xs.shape[0] < 20 or xt.shape[0] < 20:
        raise ValueError("need at least 20 samples per domain")
    rng = np.random.default_rng(rng)

    def split(x):
        perm = rng.permutation(x.shape[0])
        half = x.shape[0] // 2
        return x[perm[:half]], x[perm[half:]]

    s_fit, s_out = split(xs)
    t_fit, t_out = split(xt)
    x_fit = np.vstack([s_fit, t_fit])
    y_fit = np.concatenate([-np.ones(len(s_fit)), np.ones(len(t_fit))])
    mean = x_fit.mean(axis=0)
    std = np.maximum(x_fit.std(axis=0), 1e-12)
    w, b = _fit_logistic((x_fit - mean) / std, y_fit)

    x_out = np.vstack([s_out, t_out])
    y_out = np.concatenate([-np.ones(len(s_out)), np.ones(len(t_out))])
    pred = np.where(((x_out - mean) / std) @ w + b >= 0.0, 1.0, -1.0)
    return float((pred != y_out).mean())


def proxy_a_distance(source_features, target_features, rng):
    """2 * (1 - 2 * eps) with the probe error eps clamped to [0, 0.5]."""
    eps = min(max(domain_probe_error(source_features, target_features, rng), 0.0), 0.5)
    return 2.0 * (1.0 - 2.0 * eps)


@dataclass
class MetricsReport:
    source_accuracy: float
    target_accuracy: float  # -1.0 when no held-out target labels exist
    domain_probe_error: float
    proxy_a_distance: float
    mean_aleatoric: float
    mean_predictive: float
    seed: int
    config: dict


def build_metrics(params, cfg, source, target, rng, target_labels=None):
    """Final-model metrics on full batches."""
    source_acc = accuracy(params, source)
    if target_labels is not None:
        target_acc = accuracy(
            params, dt.Batch(target.features, target_labels, target.domain)
        )
    else:
        target_acc = -1.0
    f_s = md.infer_features(params, source.features)
    f_t = md.infer_features(params, target.features)
    eps = min(max(domain_probe_error(f_s, f_t, rng), 0.0), 0.5)
    estimate = un.predictive_uncertainty(
        np.vstack([f_s, f_t]), params, cfg.mc_samples, rng,
        dropout_rate=cfg.dropout_rate,
        entropy_of_mean=cfg.predictive_entropy_of_mean,
    )
    return MetricsReport(
        source_accuracy=source_acc,
        target_accuracy=target_acc,
        domain_probe_error=eps,
        proxy_a_distance=2.0 * (1.0 - 2.0 * eps),
        mean_aleatoric=float(estimate.aleatoric.mean()),
        mean_predictive=float(estimate.predictive.mean()),
        seed=cfg.seed,
        config=cfg.to_dict(),
    )


def write_metrics(report, path):
    """Deterministic metrics JSON; re-checks the distance identity on write."""
    if report.proxy_a_distance != 2.0 * (1.0 - 2.0 * report.domain_probe_error):
        raise ValueError("proxy_a_distance does not satisfy 2 * (1 - 2 * eps)")
    doc = {
        "source_accuracy": report.source_accuracy,
        "target_accuracy": report.target_accuracy,
        "domain_probe_error": report.domain_probe_error,
        "proxy_a_distance": report.proxy_a_distance,
        "mean_aleatoric": report.mean_aleatoric,
        "mean_predictive": report.mean_predictive,
        "seed": report.seed,
        "config": report.config,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _export_attention(params, features, cfg, rng):
    """Detached attention for inspection: dropout off, both variants."""
    results = {}
    tape = ad.Tape()
    f = tape.leaf(features)
    head = md.discriminator_forward(tape, f, params, plan=None, grl_strength=None)
    results["cada-a"] = at.aleatoric_attention(f, head, cfg.masking_constant)

    widths = [layer.weight.shape[1] for layer in params.discriminator_trunk]
    plans = md.sample_dropout_plans(cfg.dropout_rate, widths, cfg.mc_samples, rng)
    tape = ad.Tape()
    f = tape.leaf(features)
    results["cada-p"] = at.predictive_attention(
        f, params, plans, cfg.masking_constant,
        entropy_of_mean=cfg.predictive_entropy_of_mean,
    )
    return results


def export_reports(params, cfg, source, target, out_dir, rng, target_labels=None):
    """Write attention, uncertainty, and embedding CSVs plus a sidecar JSON.

    Every table uses the Batch CSV schema (domain,label,feat_*) so it
    re-parses under load_csv; the sidecar documents the column meanings.
    """
    rng = np.random.default_rng(rng)
    features = np.vstack([
        md.infer_features(params, source.features),
        md.infer_features(params, target.features),
    ])
    domain = np.concatenate([source.domain, target.domain])
    # a table is wholly labeled or wholly unlabeled, so the label column only
    # exists when held-out target labels complete the pooled labeling
    labels = None
    if target_labels is not None:
        labels = np.concatenate([source.labels, np.asarray(target_labels)])

    written = {}
    results = _export_attention(params, features, cfg, rng)
    for variant, result in results.items():
        path = f"{out_dir}/attention_{variant}.csv"
        dt.save_csv(dt.Batch(result.weights, labels, domain), path)
        written[f"attention_{variant}.csv"] = (
            f"feat_j = detached attention weight for feature j ({result.variant} gate)"
        )

    estimate = un.predictive_uncertainty(
        features, params, cfg.mc_samples, rng,
        dropout_rate=cfg.dropout_rate,
        entropy_of_mean=cfg.predictive_entropy_of_mean,
    )
    table = dt.Batch(
        np.column_stack([
            estimate.aleatoric, estimate.entropy,
            estimate.predictive, estimate.predictive_norm,
        ]),
        labels, domain,
    )
    dt.save_csv(table, f"{out_dir}/uncertainty.csv")
    written["uncertainty.csv"] = (
        "feat_0 = aleatoric, feat_1 = entropy, feat_2 = predictive, "
        "feat_3 = predictive / (1 + ln 2)"
    )

    if cfg.variant in ("cada-a", "cada-p"):
        key = "cada-a" if cfg.variant == "cada-a" else "cada-p"
        weighted = features * (1.0 + results[key].weights)
    else:
        weighted = features
    table = dt.Batch(np.hstack([features, weighted]), labels, domain)
    dt.save_csv(table, f"{out_dir}/embeddings.csv")
    d = features.shape[1]
    written["embeddings.csv"] = (
        f"feat_0..feat_{d - 1} = features f; feat_{d}..feat_{2 * d - 1} = "
        f"attention-weighted h for the trained variant ({cfg.variant}); h = f "
        "for variants without attention"
    )

    sidecar = {"config": cfg.to_dict(), "columns": written}
    with open(f"{out_dir}/exports.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sorted(written)
