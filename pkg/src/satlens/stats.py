"""Online covariance of layer outputs.

The accumulator keeps the raw sufficient statistics (sum of outer products,
column sums, observation count) in float64 and turns them into the population
covariance on demand::

    Q = sum_b A_b^T A_b / n  -  mean (x) mean

Accumulators are single-writer. To parallelise, give every worker its own
accumulator and :func:`merge` them at a synchronisation point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DimensionMismatch, EmptyAccumulator, ShapeMismatch


@dataclass
class CovarianceAccumulator:
    width: int
    running_squares: np.ndarray = field(default=None, repr=False)
    running_sum: np.ndarray = field(default=None, repr=False)
    count: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise DimensionError(f"accumulator width must be >= 1, got {self.width}")
        if self.running_squares is None:
            self.running_squares = np.zeros((self.width, self.width))
        if self.running_sum is None:
            self.running_sum = np.zeros(self.width)

    def update(self, batch: np.ndarray) -> None:
        """Fold a batch of observations (rows) into the running sums."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 1:
            batch = batch[None, :]
        if batch.ndim != 2 or batch.shape[1] != self.width:
            raise DimensionMismatch(
                f"batch of shape {batch.shape} does not match accumulator width {self.width}"
            )
        # batch.T @ batch hits the symmetric rank-k BLAS path, so the sum stays exactly symmetric
        self.running_squares += batch.T @ batch
        self.running_sum += batch.sum(axis=0)
        self.count += batch.shape[0]

    def merge(self, other: CovarianceAccumulator) -> CovarianceAccumulator:
        if other.width != self.width:
            raise DimensionMismatch(f"cannot merge widths {self.width} and {other.width}")
        return CovarianceAccumulator(
            self.width,
            self.running_squares + other.running_squares,
            self.running_sum + other.running_sum,
            self.count + other.count,
        )

    __add__ = merge

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise EmptyAccumulator("no observations accumulated")
        return self.running_sum / self.count

    def finalize(self) -> np.ndarray:
        """Population covariance of everything seen since the last reset."""
        if self.count == 0:
            raise EmptyAccumulator("cannot finalize an accumulator with no observations")
        mean = self.running_sum / self.count
        q = self.running_squares / self.count - np.outer(mean, mean)
        return 0.5 * (q + q.T)

    def reset(self) -> None:
        self.running_squares[...] = 0.0
        self.running_sum[...] = 0.0
        self.count = 0

    def to_dict(self) -> dict:
        """Flat snapshot: the upper triangle of the squares matrix, row by row."""
        iu = np.triu_indices(self.width)
        return {
            "width": self.width,
            "count": self.count,
            "running_sum": self.running_sum.tolist(),
            "running_squares_upper": self.running_squares[iu].tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> CovarianceAccumulator:
        width = int(data["width"])
        upper = np.asarray(data["running_squares_upper"], dtype=np.float64)
        if upper.shape != (width * (width + 1) // 2,):
            raise DimensionMismatch("upper-triangle length does not match width")
        squares = np.zeros((width, width))
        squares[np.triu_indices(width)] = upper
        squares = squares + np.triu(squares, 1).T
        running_sum = np.asarray(data["running_sum"], dtype=np.float64)
        if running_sum.shape != (width,):
            raise DimensionMismatch("running_sum length does not match width")
        return cls(width, squares, running_sum, int(data["count"]))


def merge(a: CovarianceAccumulator, b: CovarianceAccumulator) -> CovarianceAccumulator:
    return a.merge(b)


def unfold_conv(t: np.ndarray) -> np.ndarray:
    """Treat every spatial position of an ``N x C x H x W`` tensor as one observation.

    Rows are ordered n-major, then h, then w; columns are channels.
    """
    t = np.asarray(t)
    if t.ndim != 4:
        raise ShapeMismatch(f"expected an N x C x H x W tensor, got shape {t.shape}")
    n, c, h, w = t.shape
    return t.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def fold_conv(rows: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold_conv`."""
    n, c, h, w = shape
    return rows.reshape(n, h, w, c).transpose(0, 3, 1, 2)


def nearest_downsample(t: np.ndarray, cap: int) -> np.ndarray:
    """Nearest-neighbour resize so that the larger spatial side is at most ``cap``.

    Inputs already within the cap are returned unchanged. Source index for
    output position ``i`` is ``floor(i * in / out)``.
    """
    if cap < 1:
        raise DimensionError(f"cap must be >= 1, got {cap}")
    t = np.asarray(t)
    h, w = t.shape[-2:]
    if max(h, w) <= cap:
        return t
    scale = cap / max(h, w)
    out_h = max(1, int(round(h * scale)))
    out_w = max(1, int(round(w * scale)))
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return t[..., rows[:, None], cols[None, :]]
