"""Shape classifier and the split-based Inception Score.

All image inputs here are in *network space*: ``(N, H, W)`` arrays with
values in [-1, 1], the same representation the GAN trains on
(:meth:`ShapeDataset.scaled` for datasets, :func:`gan.sample_scaled` for
generated samples).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, load_checkpoint, save_checkpoint
from .autodiff import ops
from .autodiff.layers import Activation, BatchNorm, Conv2d, Network, Reshape
from .errors import ConfigError, ContractError, ShapeError, UnderTrainedError
from .shapegen import ShapeDataset

log = logging.getLogger(__name__)

N_CLASSES = 3
DEFAULT_SPLITS = 10
MIN_ACCURACY = 0.97
MIN_PER_CLASS = 1000
IS_CSV_HEADER = ("vertices", "mean_shift", "min_segment_angle", "source", "is_avg", "is_std")


def build_classifier_network(image_size: int, rng, base_channels: int = 16, n_classes: int = N_CLASSES) -> Network:
    n_down = {16: 2, 32: 3, 64: 4}.get(image_size)
    if n_down is None:
        raise ConfigError(f"classifier supports image sizes 16, 32 and 64, got {image_size}")
    c = base_channels
    layers = [("in", Conv2d(1, c, 4, 2, 1, rng, bias=True)), ("in_act", Activation("leaky_relu"))]
    for i in range(n_down - 1):
        layers += [
            (f"down{i}", Conv2d(c, 2 * c, 4, 2, 1, rng)),
            (f"down{i}_bn", BatchNorm(2 * c, rng)),
            (f"down{i}_act", Activation("leaky_relu")),
        ]
        c *= 2
    layers += [("head", Conv2d(c, n_classes, 4, 1, 0, rng, bias=True)), ("flat", Reshape(n_classes))]
    return Network(layers, role="classifier", image_size=image_size, n_classes=n_classes)


@dataclass
class ShapeClassifier:
    network: Network
    image_size: int
    n_classes: int = N_CLASSES
    base_channels: int = 16
    val_accuracy: float = float("nan")
    seed: int = 0

    def save(self, path) -> Path:
        state = dict(self.network.state_dict())
        state["meta.image_size"] = np.array(float(self.image_size))
        state["meta.n_classes"] = np.array(float(self.n_classes))
        state["meta.base_channels"] = np.array(float(self.base_channels))
        state["meta.val_accuracy"] = np.array(self.val_accuracy)
        state["meta.seed"] = np.array(float(self.seed))
        return save_checkpoint(path, state)

    @classmethod
    def load(cls, path) -> "ShapeClassifier":
        state = load_checkpoint(path)
        try:
            size = int(state["meta.image_size"])
            n_classes = int(state["meta.n_classes"])
            base = int(state["meta.base_channels"])
        except KeyError:
            raise ContractError(f"{path}: not a classifier checkpoint (missing meta records)") from None
        net = build_classifier_network(size, np.random.default_rng(0), base, n_classes)
        net.load_state_dict({k: v for k, v in state.items() if not k.startswith("meta.")})
        return cls(net, size, n_classes, base, float(state["meta.val_accuracy"]), int(state["meta.seed"]))


def _nll(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -ops.mean(ops.sum(ops.mul(ops.log_softmax(logits), onehot), axis=1))


def fit_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    epochs: int = 12,
    batch_size: int = 64,
    learning_rate: float = 1e-3,
    val_fraction: float = 0.1,
    n_classes: int = N_CLASSES,
    base_channels: int = 16,
) -> ShapeClassifier:
    """Train on a shuffled (1 - val_fraction) split; records held-out accuracy.

    ``images`` are network-space ``(N, H, W)``.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    init_seq, split_seq, batch_seq = np.random.SeedSequence(seed).spawn(3)
    order = np.random.default_rng(split_seq).permutation(len(images))
    n_val = max(1, int(round(val_fraction * len(images))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    size = images.shape[-1]
    net = build_classifier_network(size, np.random.default_rng(init_seq), base_channels, n_classes)
    clf = ShapeClassifier(net, size, n_classes, base_channels, seed=seed)
    state = AdamState(learning_rate=learning_rate)
    rng = np.random.default_rng(batch_seq)
    if len(train_idx) == 0:
        raise ContractError(f"no training images left after holding out {n_val} for validation")
    batch_size = min(batch_size, len(train_idx))
    x_all = images[:, None]
    for epoch in range(epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(perm) - batch_size + 1, batch_size):
            idx = perm[start:start + batch_size]
            net.zero_grad()
            with Tape() as tape:
                loss = _nll(net(Tensor(x_all[idx]), training=True), labels[idx])
            tape.backward(loss)
            adam_step(state, net.parameters())
        acc = accuracy(clf, images[val_idx], labels[val_idx])
        log.info("classifier epoch %d: loss %.4f, validation accuracy %.4f", epoch, loss.item(), acc)
    clf.val_accuracy = accuracy(clf, images[val_idx], labels[val_idx])
    return clf


def train_classifier(
    datasets: Sequence[ShapeDataset],
    seed: int = 0,
    min_accuracy: float = MIN_ACCURACY,
    min_per_class: int = MIN_PER_CLASS,
    **kw,
) -> ShapeClassifier:
    """Fit a classifier on one dataset per class (labels come from the datasets)."""
    classes = sorted({int(l) for d in datasets for l in np.unique(d.labels)})
    if len(classes) < N_CLASSES:
        raise ContractError(f"need datasets covering {N_CLASSES} classes, got classes {classes}")
    images = np.concatenate([d.scaled() for d in datasets])
    labels = np.concatenate([d.labels for d in datasets])
    counts = np.bincount(labels, minlength=N_CLASSES)
    if counts.min() < min_per_class:
        raise ContractError(f"need >= {min_per_class} images per class, got {counts.tolist()}")
    clf = fit_classifier(images, labels, seed=seed, **kw)
    if clf.val_accuracy < min_accuracy:
        raise UnderTrainedError(
            f"classifier reached validation accuracy {clf.val_accuracy:.4f} < {min_accuracy}",
            clf.val_accuracy,
        )
    return clf


def predict_probs(classifier: ShapeClassifier, images, batch: int = 500) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        return np.zeros((0, classifier.n_classes))
    if images.ndim != 3 or images.shape[1:] != (classifier.image_size,) * 2:
        raise ShapeError(
            f"classifier expects (N, {classifier.image_size}, {classifier.image_size}) images, got {images.shape}"
        )
    out = []
    for i in range(0, len(images), batch):
        logits = classifier.network(Tensor(images[i:i + batch, None]), training=False)
        out.append(ops.softmax(logits).values)
    return np.concatenate(out)


def accuracy(classifier: ShapeClassifier, images, labels) -> float:
    return float(np.mean(predict_probs(classifier, images).argmax(axis=1) == np.asarray(labels)))


@dataclass(frozen=True)
class ISResult:
    is_avg: float
    is_std: float
    per_split_scores: tuple[float, ...] = field(default=())
    n_splits: int = DEFAULT_SPLITS

    def to_dict(self) -> dict:
        return {
            "is_avg": self.is_avg,
            "is_std": self.is_std,
            "per_split_scores": list(self.per_split_scores),
            "n_splits": self.n_splits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ISResult":
        return cls(d["is_avg"], d["is_std"], tuple(d.get("per_split_scores", ())), d.get("n_splits", DEFAULT_SPLITS))


def _check_rows(probs: np.ndarray) -> None:
    if probs.ndim != 2:
        raise ContractError(f"probability matrix must be 2-D, got shape {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ContractError("probability matrix has negative or non-finite entries")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("every probability row must sum to 1")


def inception_score(probs, n_splits: int = DEFAULT_SPLITS) -> ISResult:
    """exp(mean KL(p(y|x) || p(y))) per split, marginal taken within the split."""
    probs = np.asarray(probs, dtype=np.float64)
    if n_splits < 1:
        raise ConfigError(f"n_splits must be >= 1, got {n_splits}")
    _check_rows(probs)
    if len(probs) < n_splits:
        raise ConfigError(f"need at least n_splits={n_splits} rows, got {len(probs)}")
    scores = []
    for part in np.array_split(probs, n_splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * np.log(part / marginal), 0.0)
        scores.append(float(np.exp(terms.sum(axis=1).mean())))
    arr = np.array(scores)
    return ISResult(float(arr.mean()), float(arr.std()), tuple(scores), n_splits)


def score_collection(classifier: ShapeClassifier, images, n_splits: int = DEFAULT_SPLITS) -> ISResult:
    return inception_score(predict_probs(classifier, images), n_splits)


def write_is_csv(path, rows: Iterable[tuple]) -> Path:
    """Rows are ``(vertices, mean_shift, min_segment_angle, source, ISResult)``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IS_CSV_HEADER)
        for vertices, shift, angle, source, res in rows:
            w.writerow([vertices, str(bool(shift)).lower(), _fmt_angle(angle), source, repr(res.is_avg), repr(res.is_std)])
    return path


def read_is_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["mean_shift"] = r["mean_shift"] == "true"
        r["min_segment_angle"] = float(r["min_segment_angle"])
        r["is_avg"] = float(r["is_avg"])
        r["is_std"] = float(r["is_std"])
    return rows


def _fmt_angle(a) -> str:
    a = float(a)
    return str(int(a)) if a.is_integer() else repr(a)
