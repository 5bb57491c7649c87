"""Training loop with per-epoch covariance tracking and saturation reports."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..diagnostics import SaturationReport
from ..eigenspace import AT_LEAST, POLICIES
from ..errors import ConfigError, MissingEigenspace, NonFiniteLoss
from ..numeric import rng_from_seed
from .data import Dataset
from .layers import softmax_cross_entropy
from .model import Model
from .optim import SGD, Adam

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    delta: float = 0.99
    policy: str = AT_LEAST
    augment: bool = False
    downsample_cap: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must lie in (0, 1], got {self.delta}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    report: SaturationReport

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_accuracy": self.val_accuracy, "saturation": self.report.to_dict()}


def _augment(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # random crop from a zero-padded copy, then horizontal flip with p = 0.5
    n, c, h, w = x.shape
    pad = max(1, h // 8)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        crop = xp[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def make_optimizer(model: Model, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(model, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    return SGD(model, cfg.learning_rate, cfg.momentum)


def build_model(arch: dict, dataset: Dataset, cfg: TrainConfig, dtype=np.float32) -> Model:
    return Model(arch, dataset.input_shape, seed=cfg.seed, dtype=dtype, downsample_cap=cfg.downsample_cap)


def train(model: Model, dataset: Dataset, cfg: TrainConfig, callback=None) -> list[EpochRecord]:
    """Train ``model`` and emit one saturation report per epoch.

    Each epoch resets the analysis accumulators, records every training batch,
    and at the end computes the covariance eigendecomposition, selects
    eigenspaces at ``cfg.delta`` and refreshes the projection operators.
    """
    optimizer = make_optimizer(model, cfg)
    rng = rng_from_seed(cfg.seed, 7)
    x, y = dataset.x_train, dataset.y_train
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.reset_statistics()
        order = rng.permutation(len(y))
        total, seen = 0.0, 0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx]
            if cfg.augment and dataset.is_image:
                xb = _augment(xb, rng)
            model.zero_grad()
            logits, _ = model.forward(xb, mode="train", record=True)
            loss, grad = softmax_cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} in epoch {epoch} at sample offset {start}")
            model.backward(grad)
            optimizer.step()
            total += loss * len(idx)
            seen += len(idx)
        if model.points:
            model.finalize_statistics()
            spaces = model.select_eigenspaces(cfg.delta, cfg.policy)
        else:
            spaces = []
        report = SaturationReport.from_eigenspaces(
            [p.name for p in model.points], spaces, epoch, cfg.delta)
        record = EpochRecord(epoch, total / seen, evaluate(model, dataset, "val", projection=False), report)
        logger.info("epoch %d loss %.4f val_acc %.4f s_mu %.3f",
                    epoch, record.train_loss, record.val_accuracy, report.mean_saturation)
        history.append(record)
        if callback is not None:
            callback(record)
    return history


def evaluate(model: Model, dataset: Dataset, split: str = "val", projection: bool = False,
             batch_size: int = 256) -> float:
    """Accuracy on a split, with analysis-point projection switched on or off."""
    x, y = dataset.split(split)
    predictions = predict(model, x, projection, batch_size)
    return float(np.mean(predictions == y))


def predict(model: Model, x: np.ndarray, projection: bool = False, batch_size: int = 256) -> np.ndarray:
    previous = model.projection_mode
    if projection and any(p.operator is None for p in model.points):
        raise MissingEigenspace("projection requested but eigenspaces have not been computed")
    model.set_projection(projection)
    try:
        return model.predict(x, batch_size)
    finally:
        model.projection_mode = previous


def projected_accuracy(model: Model, dataset: Dataset, delta: float, policy: str = AT_LEAST,
                       random_seed: int | None = None, split: str = "val") -> tuple[float, list[int]]:
    """Validation accuracy with projections at ``delta``, plus the per-layer ``k``.

    Eigenspaces are re-selected from the last finalized covariances. With
    ``random_seed`` set, each operator is swapped for a random orthonormal
    projection of the same rank.
    """
    spaces = model.select_eigenspaces(delta, policy)
    if random_seed is not None:
        model.set_random_projection(random_seed)
    return evaluate(model, dataset, split, projection=True), [e.k for e in spaces]
