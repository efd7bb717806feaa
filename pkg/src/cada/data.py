"""Synthetic domain-shift datasets and the Batch CSV format.

Target labels never ride along with the target batch: generators quarantine
them behind an evaluation-only accessor so the trainer cannot read them even
by accident.

CSV schema: header ``domain,label,feat_0,...,feat_{d-1}``; domain is 0
(source) or 1 (target); label -1 means unlabeled; floats are written with 17
significant digits so values round-trip exactly; UTF-8 with LF endings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Batch:
    """One domain's samples. ``labels`` is None for unlabeled batches."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray | None  # (n,) int64 or None
    domain: np.ndarray  # (n,) int64, 0 = source, 1 = target

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        self.domain = np.asarray(self.domain, dtype=np.int64)
        if self.domain.shape != (n,):
            raise ValueError("domain column must have one entry per sample")
        if not np.all((self.domain == 0) | (self.domain == 1)):
            raise ValueError("domain entries must be 0 or 1")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must have one entry per sample")
            if self.labels.min() < 0:
                raise ValueError("labels must be non-negative (use None for unlabeled)")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class AdaptationDataset:
    """A labeled source batch and an unlabeled target batch.

    The true target labels, when the generator knows them, are quarantined:
    they are reachable only through ``evaluation_target_labels`` and are not
    part of the target batch the trainer consumes.
    """

    source: Batch
    target: Batch
    _target_labels: np.ndarray | None = field(default=None, repr=False)

    def evaluation_target_labels(self):
        """Held-out target labels, for evaluation and reporting only."""
        if self._target_labels is None:
            raise ValueError("this dataset has no held-out target labels")
        return self._target_labels


def _moons(n, noise, rng):
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, size=half)
    t1 = rng.uniform(0.0, np.pi, size=n - half)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    x += rng.normal(0.0, noise, size=x.shape)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def make_two_moons(n_per_domain, noise, rotation_deg, rng):
    """Two interleaved half-circles; the target draw is rotated about the origin.

    Labels are preserved under rotation; the target copy is quarantined.
    """
    if n_per_domain < 2:
        raise ValueError("need at least 2 samples per domain")
    if noise < 0.0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(rng)
    xs, ys = _moons(n_per_domain, noise, rng)
    xt, yt = _moons(n_per_domain, noise, rng)
    theta = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    xt = xt @ rot.T
    return AdaptationDataset(
        source=Batch(xs, ys, np.zeros(n_per_domain, dtype=np.int64)),
        target=Batch(xt, None, np.ones(n_per_domain, dtype=np.int64)),
        _target_labels=yt,
    )


def make_shifted_blobs(n_per_domain, n_classes, dim, shift, scale, rng, cluster_std=1.0):
    """Gaussian clusters; every target cluster mean is affinely moved.

    ``shift`` is a length-``dim`` vector added to each mean after multiplying
    by scalar ``scale``.
    """
    if n_classes < 2 or dim < 1:
        raise ValueError("need n_classes >= 2 and dim >= 1")
    if n_per_domain < n_classes:
        raise ValueError("need at least one sample per class")
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != (dim,):
        raise ValueError(f"shift must have shape ({dim},), got {shift.shape}")
    rng = np.random.default_rng(rng)
    means = rng.normal(0.0, 3.0, size=(n_classes, dim))

    def draw(centers):
        counts = np.full(n_classes, n_per_domain // n_classes)
        counts[: n_per_domain % n_classes] += 1
        xs, ys = [], []
        for k in range(n_classes):
            xs.append(rng.normal(0.0, cluster_std, size=(counts[k], dim)) + centers[k])
            ys.append(np.full(counts[k], k, dtype=np.int64))
        x = np.vstack(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(n_per_domain)
        return x[perm], y[perm]

    xs, ys = draw(means)
    xt, yt = draw(scale * means + shift)
    return AdaptationDataset(
        source=Batch(xs, ys, np.zeros(n_per_domain, dtype=np.int64)),
        target=Batch(xt, None, np.ones(n_per_domain, dtype=np.int64)),
        _target_labels=yt,
    )


DATASET_KINDS = ("two_moons", "shifted_blobs", "csv")

_SPEC_KEYS = {
    "two_moons": ({"kind", "n_per_domain", "noise", "rotation_deg"}, set()),
    "shifted_blobs": (
        {"kind", "n_per_domain", "n_classes", "dim", "shift", "scale"},
        {"cluster_std"},
    ),
    "csv": ({"kind", "source", "target"}, {"target_labels"}),
}


def validate_dataset_spec(spec):
    """Check a dataset spec dict; unknown or missing keys are errors."""
    if not isinstance(spec, dict):
        raise ValueError("dataset spec must be a JSON object")
    kind = spec.get("kind")
    if kind not in DATASET_KINDS:
        raise ValueError(f"dataset kind must be one of {DATASET_KINDS}, got {kind!r}")
    required, optional = _SPEC_KEYS[kind]
    missing = sorted(required - set(spec))
    unknown = sorted(set(spec) - required - optional)
    if missing:
        raise ValueError(f"dataset spec missing keys {missing}")
    if unknown:
        raise ValueError(f"dataset spec has unknown keys {unknown}")
    return spec


def dataset_from_spec(spec, seed):
    """Materialize an AdaptationDataset; pure function of (spec, seed)."""
    validate_dataset_spec(spec)
    rng = np.random.default_rng([int(seed), 0])
    kind = spec["kind"]
    if kind == "two_moons":
        return make_two_moons(
            int(spec["n_per_domain"]), float(spec["noise"]),
            float(spec["rotation_deg"]), rng,
        )
    if kind == "shifted_blobs":
        return make_shifted_blobs(
            int(spec["n_per_domain"]), int(spec["n_classes"]), int(spec["dim"]),
            np.asarray(spec["shift"], dtype=np.float64), float(spec["scale"]),
            rng, cluster_std=float(spec.get("cluster_std", 1.0)),
        )
    source = load_csv(spec["source"])
    target = load_csv(spec["target"])
    if source.labels is None:
        raise ValueError(f"{spec['source']}: source data must be labeled")
    if target.labels is not None:
        raise ValueError(f"{spec['target']}: target data must be unlabeled (label -1)")
    hidden = None
    if "target_labels" in spec:
        hidden = load_label_csv(spec["target_labels"])
        if hidden.shape[0] != len(target):
            raise ValueError("target_labels row count does not match target data")
    return AdaptationDataset(source=source, target=target, _target_labels=hidden)


def save_label_csv(labels, path):
    """Single-column label file used to quarantine held-out target labels."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label\n")
        for v in np.asarray(labels, dtype=np.int64):
            fh.write(f"{int(v)}\n")


def load_label_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "label":
        raise ValueError(f"{path}: expected a 'label' header")
    try:
        values = [int(v) for v in lines[1:]]
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from None
    return np.asarray(values, dtype=np.int64)


def save_csv(batch, path):
    """Write a Batch; unlabeled batches get -1 in the label column."""
    labels = batch.labels
    n, d = batch.features.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("domain,label," + ",".join(f"feat_{j}" for j in range(d)) + "\n")
        for i in range(n):
            label = -1 if labels is None else int(labels[i])
            row = ",".join(f"{v:.17g}" for v in batch.features[i])
            fh.write(f"{batch.domain[i]},{label},{row}\n")


def load_csv(path):
    """Parse a Batch CSV; malformed input errors with the offending line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file (missing header)")
    header = lines[0].split(",")
    if header[:2] != ["domain", "label"] or header[2:] != [
        f"feat_{j}" for j in range(len(header) - 2)
    ]:
        raise ValueError(f"{path}: line 1: bad header {lines[0]!r}")
    d = len(header) - 2
    domains, labels, rows = [], [], []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != d + 2:
            raise ValueError(f"{path}: line {ln}: expected {d + 2} fields, got {len(parts)}")
        try:
            domain = int(parts[0])
            label = int(parts[1])
            feats = [float(v) for v in parts[2:]]
        except ValueError as err:
            raise ValueError(f"{path}: line {ln}: {err}") from None
        if domain not in (0, 1):
            raise ValueError(f"{path}: line {ln}: domain must be 0 or 1, got {domain}")
        if label < -1:
            raise ValueError(f"{path}: line {ln}: label must be >= -1, got {label}")
        domains.append(domain)
        labels.append(label)
        rows.append(feats)
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), d)
    labels = np.asarray(labels, dtype=np.int64)
    domains = np.asarray(domains, dtype=np.int64)
    if len(rows) == 0 or np.all(labels == -1):
        out_labels = None
    elif np.any(labels == -1):
        first = int(np.argmax(labels == -1)) + 2
        raise ValueError(f"{path}: line {first}: mixed labeled and unlabeled rows")
    else:
        out_labels = labels
    return Batch(features, out_labels, domains)
