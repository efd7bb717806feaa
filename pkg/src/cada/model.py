"""Networks and parameters.

One shared feature extractor feeds two two-headed stacks: a label classifier
and a domain discriminator.  Each stack is a small ReLU trunk with a logits
head and a variance head; the classifier's variance is exp-mapped (positive,
unbounded), the discriminator's is sigmoid-mapped (in (0, 1) so it can gate
attention as a certainty).  Dropout sits after every hidden layer and is
driven by explicit mask plans so a forward pass is a pure function of
(parameters, inputs, plan).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

GROUP_NAMES = (
    "feature",
    "classifier_trunk",
    "classifier_logits",
    "classifier_variance",
    "discriminator_trunk",
    "discriminator_logits",
    "discriminator_variance",
)

CHECKPOINT_FORMAT = "cada-params"
CHECKPOINT_VERSION = 1


@dataclass
class Linear:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)


@dataclass
class ParamGroups:
    """The seven disjoint trainable groups."""

    feature: list
    classifier_trunk: list
    classifier_logits: list
    classifier_variance: list
    discriminator_trunk: list
    discriminator_logits: list
    discriminator_variance: list

    def group(self, name):
        if name not in GROUP_NAMES:
            raise KeyError(f"unknown parameter group '{name}'")
        return getattr(self, name)

    def named_arrays(self):
        """Yield ("group.layer.weight|bias", array) in a fixed order."""
        for name in GROUP_NAMES:
            for i, layer in enumerate(self.group(name)):
                yield f"{name}.{i}.weight", layer.weight
                yield f"{name}.{i}.bias", layer.bias

    def copy(self):
        return ParamGroups(
            **{
                name: [Linear(l.weight.copy(), l.bias.copy()) for l in self.group(name)]
                for name in GROUP_NAMES
            }
        )

    @property
    def n_classes(self):
        return self.classifier_logits[0].weight.shape[1]

    @property
    def input_dim(self):
        return self.feature[0].weight.shape[0]

    @property
    def feature_dim(self):
        return self.feature[-1].weight.shape[1]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Linear(
        rng.uniform(-limit, limit, size=(fan_in, fan_out)),
        np.zeros(fan_out),
    )


def init_params(
    input_dim,
    n_classes,
    rng,
    feature_widths=(64, 32),
    classifier_width=32,
    discriminator_width=32,
):
    """Glorot-uniform weights, zero biases, drawn in a fixed order."""
    rng = np.random.default_rng(rng)
    if input_dim < 1 or n_classes < 2:
        raise ValueError("need input_dim >= 1 and n_classes >= 2")
    widths = list(feature_widths)
    if not widths:
        raise ValueError("feature extractor needs at least one hidden layer")
    feature = []
    fan_in = input_dim
    for w in widths:
        feature.append(_glorot(rng, fan_in, w))
        fan_in = w
    return ParamGroups(
        feature=feature,
        classifier_trunk=[_glorot(rng, fan_in, classifier_width)],
        classifier_logits=[_glorot(rng, classifier_width, n_classes)],
        classifier_variance=[_glorot(rng, classifier_width, 1)],
        discriminator_trunk=[_glorot(rng, fan_in, discriminator_width)],
        discriminator_logits=[_glorot(rng, discriminator_width, 2)],
        discriminator_variance=[_glorot(rng, discriminator_width, 1)],
    )


@dataclass(frozen=True)
class DropoutPlan:
    """Frozen masks for one stack of hidden layers.

    Masks are per-unit (broadcast across the batch, i.e. a sampled submodel)
    with entries 0 or 1/(1 - rate).
    """

    rate: float
    masks: tuple
    lineage: tuple  # (stream token, plan index): same lineage, same masks


def sample_dropout_plans(rate, widths, count, rng):
    """Draw ``count`` independent mask plans for hidden layers of ``widths``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if count < 1:
        raise ValueError("plan count must be >= 1")
    rng = np.random.default_rng(rng)
    token = int(rng.integers(0, 2**63))
    scale = 1.0 / (1.0 - rate)
    plans = []
    for t in range(count):
        masks = tuple((rng.random(w) >= rate) * scale for w in widths)
        plans.append(DropoutPlan(rate=rate, masks=masks, lineage=(token, t)))
    return plans


@dataclass
class HeadOutput:
    """Logits plus the variance head in raw, mapped, and stddev form."""

    logits: ad.Tensor
    raw_var: ad.Tensor
    var: ad.Tensor  # (n, 1), always positive
    sigma: ad.Tensor  # sqrt(var)


def _affine(tape, x, layer):
    return ad.add(ad.matmul(x, tape.param(layer.weight)), tape.param(layer.bias))


def _hidden_stack(tape, x, layers, plan):
    if plan is not None and len(plan.masks) != len(layers):
        raise ValueError(
            f"plan has {len(plan.masks)} masks for {len(layers)} hidden layers"
        )
    h = x
    for i, layer in enumerate(layers):
        h = ad.relu(_affine(tape, h, layer))
        if plan is not None:
            if plan.masks[i].shape[-1] != layer.weight.shape[1]:
                raise ValueError("dropout mask width does not match layer width")
            h = ad.mul(h, plan.masks[i])
    return h


def feature_extract(tape, x, params, plan=None):
    """Run the shared extractor; ``x`` is a tensor on ``tape`` or a constant."""
    xv = x.values if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    if xv.ndim != 2 or xv.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs of shape (n, {params.input_dim}), got {xv.shape}")
    return _hidden_stack(tape, x, params.feature, plan)


def classifier_forward(tape, h, params, plan=None):
    """Classifier trunk + heads on (possibly attention-weighted) features."""
    z = _hidden_stack(tape, h, params.classifier_trunk, plan)
    logits = _affine(tape, z, params.classifier_logits[0])
    raw = _affine(tape, z, params.classifier_variance[0])
    var = ad.exp(raw)
    sigma = ad.exp(ad.mul(raw, 0.5))
    return HeadOutput(logits=logits, raw_var=raw, var=var, sigma=sigma)


def discriminator_forward(tape, f, params, plan=None, grl_strength=None):
    """Discriminator trunk + heads on raw features.

    ``grl_strength`` inserts the gradient-reversal op below the trunk (the
    adversarial training path); None leaves the graph untouched, which is what
    the attention pass needs to read true uncertainty gradients.
    """
    x = f if grl_strength is None else ad.gradient_reversal(f, grl_strength)
    z = _hidden_stack(tape, x, params.discriminator_trunk, plan)
    logits = _affine(tape, z, params.discriminator_logits[0])
    raw = _affine(tape, z, params.discriminator_variance[0])
    var = ad.sigmoid(raw)
    sigma = ad.exp(ad.mul(ad.log(var), 0.5))
    return HeadOutput(logits=logits, raw_var=raw, var=var, sigma=sigma)


def _np_stack(x, layers):
    h = x
    for layer in layers:
        h = np.maximum(h @ layer.weight + layer.bias, 0.0)
    return h


def infer_features(params, x):
    """Inference-path features: dropout off, plain numpy."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected inputs of shape (n, {params.input_dim}), got {x.shape}")
    return _np_stack(x, params.feature)


def infer_class_logits(params, x):
    """Inference-path class logits: attention off (h = f), dropout off."""
    f = infer_features(params, x)
    z = _np_stack(f, params.classifier_trunk)
    head = params.classifier_logits[0]
    return z @ head.weight + head.bias


def save_checkpoint(params, path):
    """Versioned JSON checkpoint; float64-lossless and byte-deterministic."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.named_arrays()
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise ValueError(f"checkpoint array '{name}' has wrong element count")
        arrays[name] = data.reshape(shape)
    groups = {}
    for gname in GROUP_NAMES:
        layers = []
        i = 0
        while f"{gname}.{i}.weight" in arrays:
            layers.append(Linear(arrays[f"{gname}.{i}.weight"], arrays[f"{gname}.{i}.bias"]))
            i += 1
        if not layers:
            raise ValueError(f"checkpoint is missing parameter group '{gname}'")
        groups[gname] = layers
    return ParamGroups(**groups)
