"""Adversarial training loop.

The saddle-point objective J = L_cls + L_cls_var - lambda * (L_dom +
L_dom_var) is realized by one fused backward pass: the discriminator path
carries a gradient-reversal op of strength lambda, so feature parameters
receive d(L_cls + L_cls_var)/d(theta) - lambda * d(L_dom + L_dom_var)/d(theta)
while discriminator parameters, sitting above the reversal, receive their
plain loss gradient regardless of lambda.

Each step freezes one dropout plan and one noise draw, optionally runs the
attention pass on a dedicated tape to get detached weights, then builds the
four losses on the training tape and applies SGD with momentum per parameter
group.  Variants: source-only (lambda 0, discriminator not updated), cada-w
(adversarial Bayesian model, no attention), cada-a (attention gated by the
single-pass variance head), cada-p (attention gated by MC-dropout predictive
uncertainty).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import attention as at
from . import autodiff as ad
from . import data as dt
from . import model as md
from . import uncertainty as un

VARIANTS = ("source-only", "cada-w", "cada-a", "cada-p")
LAMBDA_KINDS = ("constant", "annealed")
ATTENTION_VARIANTS = ("cada-a", "cada-p")

HISTORY_COLUMNS = (
    "epoch",
    "lambda",
    "classifier_loss",
    "classifier_var_loss",
    "domain_loss",
    "domain_var_loss",
    "objective",
    "source_accuracy",
    "target_accuracy",
    "mean_aleatoric",
    "mean_predictive",
)

# rng stream ids, all derived as default_rng([seed, stream])
_STREAM_DATA = 0
_STREAM_INIT = 1
_STREAM_SHUFFLE = 2
_STREAM_DROPOUT = 3
_STREAM_NOISE = 4
_STREAM_ATTENTION = 5
_STREAM_EVAL = 6

_DEFAULT_DATASET = {
    "kind": "two_moons",
    "n_per_domain": 500,
    "noise": 0.1,
    "rotation_deg": 35.0,
}


def lambda_schedule(progress, kind, value=1.0):
    """Adversarial trade-off weight at training progress in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    if kind == "constant":
        return float(value)
    if kind == "annealed":
        return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0
    raise ValueError(f"unknown lambda schedule kind '{kind}'")


def total_objective(classifier_loss, classifier_var_loss, domain_loss,
                    domain_var_loss, tradeoff):
    """The reported saddle-point objective."""
    return (classifier_loss + classifier_var_loss) - tradeoff * (
        domain_loss + domain_var_loss
    )


def _expect(doc, key, kinds, where="config"):
    value = doc[key]
    if kinds is int and isinstance(value, bool):
        raise ValueError(f"{where}: '{key}' must be an integer, got a bool")
    if kinds is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kinds):
        raise ValueError(f"{where}: '{key}' has wrong type {type(value).__name__}")
    return value


@dataclass
class TrainConfig:
    variant: str = "cada-p"
    lambda_kind: str = "annealed"
    lambda_value: float = 1.0
    mc_samples: int = 10
    masking_constant: float = 1e4
    dropout_rate: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    feature_widths: tuple = (64, 32)
    classifier_width: int = 32
    discriminator_width: int = 32
    predictive_entropy_of_mean: bool = False
    dataset: dict = field(default_factory=lambda: dict(_DEFAULT_DATASET))

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}' (choose from {VARIANTS})")
        if self.lambda_kind not in LAMBDA_KINDS:
            raise ValueError(f"unknown lambda_kind '{self.lambda_kind}'")
        if self.lambda_value < 0.0:
            raise ValueError("lambda_value must be >= 0")
        if self.mc_samples < 1 or self.batch_size < 1:
            raise ValueError("mc_samples and batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.masking_constant < 1.0:
            raise ValueError("masking_constant must be >= 1")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        widths = tuple(self.feature_widths)
        if not widths or any(w < 1 for w in widths):
            raise ValueError("feature_widths must be a non-empty tuple of positive ints")
        if self.classifier_width < 1 or self.discriminator_width < 1:
            raise ValueError("trunk widths must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        dt.validate_dataset_spec(self.dataset)
        return self

    def to_dict(self):
        doc = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "feature_widths":
                value = list(value)
            elif f.name == "dataset":
                value = dict(value)
            doc[f.name] = value
        return doc

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"config: unknown keys {unknown}")
        kw = {}
        for f in fields(cls):
            if f.name not in doc:
                continue
            if f.name in ("variant", "lambda_kind"):
                kw[f.name] = _expect(doc, f.name, str)
            elif f.name in ("mc_samples", "epochs", "batch_size", "seed",
                            "classifier_width", "discriminator_width"):
                kw[f.name] = _expect(doc, f.name, int)
            elif f.name in ("lambda_value", "masking_constant", "dropout_rate",
                            "learning_rate", "momentum"):
                kw[f.name] = _expect(doc, f.name, float)
            elif f.name == "predictive_entropy_of_mean":
                kw[f.name] = _expect(doc, f.name, bool)
            elif f.name == "feature_widths":
                widths = _expect(doc, f.name, (list, tuple))
                if not all(isinstance(w, int) and not isinstance(w, bool) for w in widths):
                    raise ValueError("config: feature_widths must be a list of ints")
                kw[f.name] = tuple(widths)
            elif f.name == "dataset":
                kw[f.name] = dict(_expect(doc, f.name, dict))
        return cls(**kw).validate()

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class TrainHistory:
    """Per-epoch records with a fixed CSV column order."""

    rows: list = field(default_factory=list)

    def append(self, **row):
        if set(row) != set(HISTORY_COLUMNS):
            raise ValueError("history row has wrong fields")
        for key, value in row.items():
            if not math.isfinite(float(value)):
                raise ValueError(f"history field '{key}' is not finite: {value}")
        self.rows.append({k: row[k] for k in HISTORY_COLUMNS})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        if name not in HISTORY_COLUMNS:
            raise KeyError(name)
        return np.array([row[name] for row in self.rows])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(HISTORY_COLUMNS) + "\n")
            for row in self.rows:
                cells = [str(int(row["epoch"]))]
                cells += [f"{float(row[k]):.17g}" for k in HISTORY_COLUMNS[1:]]
                fh.write(",".join(cells) + "\n")


@dataclass(frozen=True)
class StepRandomness:
    """Everything random in one step, frozen up front."""

    feature_plan: md.DropoutPlan
    classifier_plan: md.DropoutPlan
    discriminator_plan: md.DropoutPlan
    classifier_noise: np.ndarray  # (T, n_s, k)
    domain_noise_source: np.ndarray  # (T, n_s, 2)
    domain_noise_target: np.ndarray  # (T, n_t, 2)


@dataclass
class LossParts:
    classifier_loss: ad.Tensor
    classifier_var_loss: ad.Tensor
    domain_loss: ad.Tensor
    domain_var_loss: ad.Tensor


@dataclass
class StepLosses:
    classifier_loss: float
    classifier_var_loss: float
    domain_loss: float
    domain_var_loss: float


def draw_step_randomness(params, cfg, n_source, n_target, dropout_rng, noise_rng):
    """One dropout plan per stack and the per-head Gaussian noise draws."""
    k = params.n_classes
    t = cfg.mc_samples
    feature_widths = [layer.weight.shape[1] for layer in params.feature]
    cls_widths = [layer.weight.shape[1] for layer in params.classifier_trunk]
    disc_widths = [layer.weight.shape[1] for layer in params.discriminator_trunk]
    return StepRandomness(
        feature_plan=md.sample_dropout_plans(cfg.dropout_rate, feature_widths, 1, dropout_rng)[0],
        classifier_plan=md.sample_dropout_plans(cfg.dropout_rate, cls_widths, 1, dropout_rng)[0],
        discriminator_plan=md.sample_dropout_plans(cfg.dropout_rate, disc_widths, 1, dropout_rng)[0],
        classifier_noise=noise_rng.standard_normal((t, n_source, k)),
        domain_noise_source=noise_rng.standard_normal((t, n_source, 2)),
        domain_noise_target=noise_rng.standard_normal((t, n_target, 2)),
    )


def build_losses(tape, params, x_source, y_source, x_target, rand, mc_samples,
                 attention_w=None, grl_strength=None):
    """The four loss tensors on one tape.

    The classifier consumes attention-weighted source features when
    ``attention_w`` is given (a detached constant); the discriminator always
    consumes raw features from both domains, through a reversal op when
    ``grl_strength`` is not None.  Domain losses average over the pooled batch,
    so each branch is weighted by its share of n_s + n_t.
    """
    n_s = x_source.values.shape[0] if isinstance(x_source, ad.Tensor) else len(x_source)
    n_t = x_target.values.shape[0] if isinstance(x_target, ad.Tensor) else len(x_target)
    f_s = md.feature_extract(tape, x_source, params, plan=rand.feature_plan)
    f_t = md.feature_extract(tape, x_target, params, plan=rand.feature_plan)
    h_s = f_s if attention_w is None else at.apply_attention(f_s, attention_w)

    c_head = md.classifier_forward(tape, h_s, params, plan=rand.classifier_plan)
    classifier_loss = ad.cross_entropy(c_head.logits, y_source)
    classifier_var_loss = un.aleatoric_loss(
        c_head.logits, c_head.sigma, y_source, mc_samples, rand.classifier_noise
    )

    d_src = md.discriminator_forward(
        tape, f_s, params, plan=rand.discriminator_plan, grl_strength=grl_strength
    )
    d_tgt = md.discriminator_forward(
        tape, f_t, params, plan=rand.discriminator_plan, grl_strength=grl_strength
    )
    zeros = np.zeros(n_s, dtype=np.int64)
    ones = np.ones(n_t, dtype=np.int64)
    share_s = n_s / (n_s + n_t)
    share_t = n_t / (n_s + n_t)
    domain_loss = ad.add(
        ad.mul(ad.cross_entropy(d_src.logits, zeros), share_s),
        ad.mul(ad.cross_entropy(d_tgt.logits, ones), share_t),
    )
    domain_var_loss = ad.add(
        ad.mul(
            un.aleatoric_loss(d_src.logits, d_src.sigma, zeros, mc_samples,
                              rand.domain_noise_source),
            share_s,
        ),
        ad.mul(
            un.aleatoric_loss(d_tgt.logits, d_tgt.sigma, ones, mc_samples,
                              rand.domain_noise_target),
            share_t,
        ),
    )
    return LossParts(classifier_loss, classifier_var_loss, domain_loss, domain_var_loss)


def attention_pass(params, x_source, cfg, rand, attention_rng):
    """Detached attention weights for the source minibatch, on a dedicated tape."""
    tape = ad.Tape()
    f = md.feature_extract(tape, x_source, params, plan=rand.feature_plan)
    if cfg.variant == "cada-a":
        head = md.discriminator_forward(
            tape, f, params, plan=rand.discriminator_plan, grl_strength=None
        )
        return at.aleatoric_attention(f, head, cfg.masking_constant)
    if cfg.variant == "cada-p":
        widths = [layer.weight.shape[1] for layer in params.discriminator_trunk]
        plans = md.sample_dropout_plans(
            cfg.dropout_rate, widths, cfg.mc_samples, attention_rng
        )
        return at.predictive_attention(
            f, params, plans, cfg.masking_constant,
            entropy_of_mean=cfg.predictive_entropy_of_mean,
        )
    raise ValueError(f"variant '{cfg.variant}' has no attention pass")


_CLASSIFIER_SIDE = (
    "feature",
    "classifier_trunk",
    "classifier_logits",
    "classifier_variance",
)


def make_velocities(params):
    return {name: np.zeros_like(arr) for name, arr in params.named_arrays()}


def apply_updates(params, velocities, gradients, learning_rate, momentum,
                  group_names=md.GROUP_NAMES):
    """SGD with momentum, per group: v <- mu v + g; theta <- theta - lr v."""
    for name in group_names:
        for i, layer in enumerate(params.group(name)):
            for attr in ("weight", "bias"):
                key = f"{name}.{i}.{attr}"
                grad = gradients[key]
                vel = velocities[key]
                vel *= momentum
                vel += grad
                getattr(layer, attr)[...] -= learning_rate * vel


def collect_gradients(tape, params):
    return {name: tape.grad_for(arr) for name, arr in params.named_arrays()}


def train_step(params, velocities, x_source, y_source, x_target, cfg, tradeoff,
               dropout_rng, noise_rng, attention_rng):
    """One fused minibatch update; mutates params/velocities in place."""
    if len(x_source) == 0 or len(x_target) == 0:
        raise ValueError("minibatches must be non-empty")
    rand = draw_step_randomness(params, cfg, len(x_source), len(x_target),
                                dropout_rng, noise_rng)
    attention_w = None
    if cfg.variant in ATTENTION_VARIANTS:
        attention_w = attention_pass(params, x_source, cfg, rand, attention_rng).weights

    tape = ad.Tape()
    parts = build_losses(tape, params, x_source, y_source, x_target, rand,
                         cfg.mc_samples, attention_w, grl_strength=tradeoff)
    if cfg.variant == "source-only":
        root = ad.add(parts.classifier_loss, parts.classifier_var_loss)
        groups = _CLASSIFIER_SIDE
    else:
        root = ad.add(
            ad.add(parts.classifier_loss, parts.classifier_var_loss),
            ad.add(parts.domain_loss, parts.domain_var_loss),
        )
        groups = md.GROUP_NAMES
    tape.backward(root)
    apply_updates(params, velocities, collect_gradients(tape, params),
                  cfg.learning_rate, cfg.momentum, groups)
    return StepLosses(
        classifier_loss=parts.classifier_loss.item(),
        classifier_var_loss=parts.classifier_var_loss.item(),
        domain_loss=parts.domain_loss.item(),
        domain_var_loss=parts.domain_var_loss.item(),
    )


def _source_accuracy(params, source):
    logits = md.infer_class_logits(params, source.features)
    return float((logits.argmax(axis=1) == source.labels).mean())


def train(cfg, source, target, target_accuracy_probe=None, progress=None):
    """Train from scratch; returns (params, history).

    ``source`` must be labeled and ``target`` unlabeled; the trainer has no
    access to target labels.  ``target_accuracy_probe``, when given, is an
    evaluation-only callback params -> float used to fill the history column;
    without it target_accuracy records the sentinel -1.0.  ``progress`` is an
    optional callback (epoch, row_dict) for logging.
    """
    cfg.validate()
    if source.labels is None:
        raise ValueError("source batch must be labeled")
    if target.labels is not None:
        raise ValueError("target batch must be unlabeled")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("source and target batches must be non-empty")
    if source.features.shape[1] != target.features.shape[1]:
        raise ValueError("source and target feature dimensions differ")
    n_classes = max(int(source.labels.max()) + 1, 2)

    init_rng = np.random.default_rng([cfg.seed, _STREAM_INIT])
    shuffle_rng = np.random.default_rng([cfg.seed, _STREAM_SHUFFLE])
    dropout_rng = np.random.default_rng([cfg.seed, _STREAM_DROPOUT])
    noise_rng = np.random.default_rng([cfg.seed, _STREAM_NOISE])
    attention_rng = np.random.default_rng([cfg.seed, _STREAM_ATTENTION])
    eval_rng = np.random.default_rng([cfg.seed, _STREAM_EVAL])

    params = md.init_params(
        source.features.shape[1],
        n_classes,
        init_rng,
        feature_widths=cfg.feature_widths,
        classifier_width=cfg.classifier_width,
        discriminator_width=cfg.discriminator_width,
    )
    velocities = make_velocities(params)
    history = TrainHistory()
    n_s, n_t = len(source), len(target)
    steps = -(-n_s // cfg.batch_size)
    pooled = np.vstack([source.features, target.features])

    for epoch in range(cfg.epochs):
        progress_frac = epoch / max(1, cfg.epochs - 1)
        if cfg.variant == "source-only":
            tradeoff = 0.0
        else:
            tradeoff = lambda_schedule(progress_frac, cfg.lambda_kind, cfg.lambda_value)
        perm_s = shuffle_rng.permutation(n_s)
        perm_t = shuffle_rng.permutation(n_t)
        sums = np.zeros(4)
        for step in range(steps):
            lo = step * cfg.batch_size
            idx_s = perm_s[lo : lo + cfg.batch_size]
            idx_t = np.take(perm_t, np.arange(lo, lo + len(idx_s)), mode="wrap")
            try:
                losses = train_step(
                    params, velocities,
                    source.features[idx_s], source.labels[idx_s],
                    target.features[idx_t],
                    cfg, tradeoff, dropout_rng, noise_rng, attention_rng,
                )
            except FloatingPointError as err:
                raise FloatingPointError(
                    f"epoch {epoch}, step {step}: {err}"
                ) from err
            sums += (
                losses.classifier_loss,
                losses.classifier_var_loss,
                losses.domain_loss,
                losses.domain_var_loss,
            )
        means = sums / steps
        pooled_features = md.infer_features(params, pooled)
        estimate = un.predictive_uncertainty(
            pooled_features, params, cfg.mc_samples, eval_rng,
            dropout_rate=cfg.dropout_rate,
            entropy_of_mean=cfg.predictive_entropy_of_mean,
        )
        row = dict(
            epoch=epoch,
            **{"lambda": tradeoff},
            classifier_loss=means[0],
            classifier_var_loss=means[1],
            domain_loss=means[2],
            domain_var_loss=means[3],
            objective=total_objective(means[0], means[1], means[2], means[3], tradeoff),
            source_accuracy=_source_accuracy(params, source),
            target_accuracy=(
                float(target_accuracy_probe(params))
                if target_accuracy_probe is not None
                else -1.0
            ),
            mean_aleatoric=float(estimate.aleatoric.mean()),
            mean_predictive=float(estimate.predictive.mean()),
        )
        history.append(**row)
        if progress is not None:
            progress(epoch, row)
    return params, history
