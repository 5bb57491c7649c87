"""Logistic-regression probes on intermediate activations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch, DomainError
from .nn.layers import adaptive_avg_pool, softmax_cross_entropy

PROBE_POOL = 4


def extract_probe_features(activation: np.ndarray) -> np.ndarray:
    """Pool conv maps to at most 4x4 and flatten; dense activations pass through."""
    a = np.asarray(activation)
    if a.ndim == 2:
        return a
    if a.ndim != 4:
        raise DomainError(f"expected N x F or N x C x H x W activations, got {a.ndim}-D")
    h, w = a.shape[-2:]
    pooled = adaptive_avg_pool(a, min(h, PROBE_POOL), min(w, PROBE_POOL))
    return pooled.reshape(len(a), -1)


@dataclass
class ProbeModel:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    epochs: int
    initial_loss: float
    final_loss: float

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.logits(features).argmax(axis=1)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def train_probe(features, labels, epochs: int = 100, learning_rate: float = 1.0,
                l2: float = 1e-4, num_classes: int | None = None) -> ProbeModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardised with the training mean and standard deviation
    (constant columns keep scale 1) and divided by ``sqrt(F)``. The common
    factor bounds the loss curvature by 1/2 whatever the feature count, so the
    default step of 1.0 is stable, and it makes the fitted logits invariant to
    duplicated columns. Weights start at zero, so the fit is deterministic. The loss reported excludes the L2 term.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise DomainError(f"features must be N x F, got shape {x.shape}")
    if len(x) != len(y):
        raise DimensionMismatch(f"{len(x)} feature rows but {len(y)} labels")
    if epochs < 1:
        raise DomainError(f"epochs must be >= 1, got {epochs}")
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("probe labels contain a single class")
    k = max(int(y.max()) + 1, num_classes or 2)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    scale *= np.sqrt(x.shape[1])
    z = (x - mean) / scale
    weight = np.zeros((x.shape[1], k))
    bias = np.zeros(k)
    initial = None
    loss = float("nan")
    for _ in range(epochs):
        loss, grad = softmax_cross_entropy(z @ weight + bias, y)
        if initial is None:
            initial = loss
        weight -= learning_rate * (z.T @ grad + l2 * weight)
        bias -= learning_rate * grad.sum(axis=0)
    loss, _ = softmax_cross_entropy(z @ weight + bias, y)
    return ProbeModel(weight, bias, mean, scale, epochs, initial, loss)


@dataclass
class ProbeSweep:
    layers: list[str]
    accuracies: list[float]
    model_accuracy: float
    train_accuracies: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ProbeSweep:
        return cls(**data)


def collect_features(model, x: np.ndarray, batch_size: int = 256) -> dict[str, np.ndarray]:
    """Probe features at every analysis point, gathered in eval mode without projection."""
    previous = model.projection_mode
    model.projection_mode = False
    chunks: dict[str, list[np.ndarray]] = {p.name: [] for p in model.points}
    try:
        for i in range(0, len(x), batch_size):
            _, acts = model.forward(x[i:i + batch_size], mode="eval")
            for name, a in acts.items():
                chunks[name].append(extract_probe_features(a))
    finally:
        model.projection_mode = previous
    return {name: np.concatenate(parts) for name, parts in chunks.items()}


def probe_sweep(model, dataset, epochs: int = 100, batch_size: int = 256) -> ProbeSweep:
    """Fit one probe per analysis point on train features; score on validation."""
    from .nn.train import evaluate

    train_feats = collect_features(model, dataset.x_train, batch_size)
    val_feats = collect_features(model, dataset.x_val, batch_size)
    names, val_acc, train_acc = [], [], []
    for point in model.points:
        probe = train_probe(train_feats[point.name], dataset.y_train, epochs,
                            num_classes=dataset.num_classes)
        names.append(point.name)
        train_acc.append(probe.accuracy(train_feats[point.name], dataset.y_train))
        val_acc.append(probe.accuracy(val_feats[point.name], dataset.y_val))
    return ProbeSweep(names, val_acc, evaluate(model, dataset, "val"), train_acc)
