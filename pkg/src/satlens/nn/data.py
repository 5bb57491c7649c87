"""Dataset providers: seeded synthetic tasks and IDX (MNIST-format) files."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CountMismatch, DatasetNotFound, DomainError, TruncatedFile
from ..numeric import rng_from_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    name: str = ""

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    @property
    def is_image(self) -> bool:
        return self.x_train.ndim == 4

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.x_train, self.y_train
        if which in ("val", "validation"):
            return self.x_val, self.y_val
        raise ValueError(f"unknown split {which!r}")


def _split(x, y, num_classes, val_fraction, rng, name) -> Dataset:
    n = len(y)
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    val, train = order[:n_val], order[n_val:]
    return Dataset(x[train], y[train], x[val], y[val], num_classes, name)


# -- synthetic tasks ------------------------------------------------------------

def blobs_means(classes: int, features: int, separation: float) -> np.ndarray:
    """Class means ``separation * e_c``: every pair of means is equally far apart."""
    if features < classes:
        raise DomainError(f"blobs need features >= classes, got {features} < {classes}")
    means = np.zeros((classes, features))
    means[np.arange(classes), np.arange(classes)] = separation
    return means


def _blobs(classes, samples, features, separation, rng):
    y = rng.integers(0, classes, size=samples)
    x = blobs_means(classes, features, separation)[y] + rng.standard_normal((samples, features))
    return x, y


def _rings(classes, samples, noise, rng):
    y = rng.integers(0, classes, size=samples)
    theta = rng.uniform(0, 2 * np.pi, size=samples)
    radius = 1.0 + y + noise * rng.standard_normal(samples)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1), y


# Glyph strokes in unit-square coordinates: ("seg", x0, y0, x1, y1) or ("ring", cx, cy, r).
GLYPHS = [
    [("seg", 0.15, 0.5, 0.85, 0.5)],                                   # horizontal bar
    [("seg", 0.5, 0.15, 0.5, 0.85)],                                   # vertical bar
    [("ring", 0.5, 0.5, 0.3)],                                         # circle
    [("seg", 0.15, 0.15, 0.85, 0.85), ("seg", 0.15, 0.85, 0.85, 0.15)],  # X
    [("seg", 0.15, 0.5, 0.85, 0.5), ("seg", 0.5, 0.15, 0.5, 0.85)],     # plus
    [("seg", 0.2, 0.2, 0.8, 0.2), ("seg", 0.8, 0.2, 0.8, 0.8),
     ("seg", 0.8, 0.8, 0.2, 0.8), ("seg", 0.2, 0.8, 0.2, 0.2)],          # square
    [("seg", 0.15, 0.85, 0.85, 0.15)],                                 # slash
    [("seg", 0.2, 0.2, 0.8, 0.2), ("seg", 0.5, 0.2, 0.5, 0.85)],        # T
    [("seg", 0.25, 0.15, 0.25, 0.8), ("seg", 0.25, 0.8, 0.85, 0.8)],    # L
    [("seg", 0.5, 0.15, 0.15, 0.85), ("seg", 0.5, 0.15, 0.85, 0.85),
     ("seg", 0.15, 0.85, 0.85, 0.85)],                                 # triangle
]


def _segment_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / length2, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def _glyph_geometry(classes, samples, rng):
    y = rng.integers(0, classes, size=samples)
    geom = {
        "angle": rng.uniform(-0.3, 0.3, size=samples),
        "scale": rng.uniform(0.75, 1.05, size=samples),
        "shift": rng.uniform(-0.12, 0.12, size=(samples, 2)),
        "stroke": rng.uniform(0.09, 0.14, size=samples),
        "intensity": rng.uniform(0.6, 1.0, size=samples),
    }
    return y, geom


def render_glyphs(y, geom, resolution: int, noise: float, rng) -> np.ndarray:
    """Rasterise glyphs at ``resolution`` with analytic anti-aliasing."""
    n = len(y)
    centres = (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(centres, centres)
    pixel = 1.0 / resolution
    images = np.zeros((n, 1, resolution, resolution))
    for i in range(n):
        # map pixel centres back into the glyph's canonical frame
        c, s = math.cos(geom["angle"][i]), math.sin(geom["angle"][i])
        ux = gx - 0.5 - geom["shift"][i, 0]
        uy = gy - 0.5 - geom["shift"][i, 1]
        px = (c * ux + s * uy) / geom["scale"][i] + 0.5
        py = (-s * ux + c * uy) / geom["scale"][i] + 0.5
        dist = np.full(gx.shape, np.inf)
        for stroke in GLYPHS[y[i]]:
            if stroke[0] == "seg":
                d = _segment_distance(px, py, *stroke[1:])
            else:
                _, cx, cy, r = stroke
                d = np.abs(np.hypot(px - cx, py - cy) - r)
            dist = np.minimum(dist, d * geom["scale"][i])
        half = geom["stroke"][i] / 2
        coverage = np.clip((half - dist) / pixel + 0.5, 0.0, 1.0)
        images[i, 0] = geom["intensity"][i] * coverage
    if noise:
        images += noise * rng.standard_normal(images.shape)
    return images.astype(np.float32)


def synth_dataset(kind: str, classes: int = 3, samples: int = 1000, resolution: int = 8,
                  seed: int = 0, features: int = 8, separation: float = 4.0,
                  noise: float = 0.1, val_fraction: float = 0.2) -> Dataset:
    """Deterministic synthetic classification tasks.

    ``blobs``: isotropic unit-variance Gaussians around ``separation * e_c``.
    ``rings``: concentric 2-D rings with radius ``1 + c``.
    ``glyph-images``: 1-channel stroke glyphs with random pose. Labels and
    poses depend only on ``seed``, so the same seed rendered at different
    resolutions yields the same samples at different sizes.
    """
    if classes < 2:
        raise DomainError(f"need at least 2 classes, got {classes}")
    if samples < 2:
        raise DomainError(f"need at least 2 samples, got {samples}")
    if not 0.0 < val_fraction < 1.0:
        raise DomainError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = rng_from_seed(seed, 0)
    if kind == "blobs":
        x, y = _blobs(classes, samples, features, separation, rng)
        x = x.astype(np.float32)
    elif kind == "rings":
        x, y = _rings(classes, samples, noise, rng)
        x = x.astype(np.float32)
    elif kind in ("glyph-images", "glyphs"):
        if classes > len(GLYPHS):
            raise DomainError(f"glyph-images supports at most {len(GLYPHS)} classes")
        if resolution < 2:
            raise DomainError(f"resolution must be >= 2, got {resolution}")
        y, geom = _glyph_geometry(classes, samples, rng)
        x = render_glyphs(y, geom, resolution, noise, rng_from_seed(seed, 1, resolution))
    else:
        raise DomainError(f"unknown synthetic dataset kind {kind!r}")
    return _split(x, y.astype(np.int64), classes, val_fraction, rng_from_seed(seed, 2), kind)


def random_labels(dataset: Dataset, seed: int) -> Dataset:
    """Same inputs with labels drawn uniformly at random."""
    rng = rng_from_seed(seed, 3)
    k = dataset.num_classes
    return Dataset(dataset.x_train, rng.integers(0, k, len(dataset.y_train)),
                   dataset.x_val, rng.integers(0, k, len(dataset.y_val)), k, dataset.name + "-random")


# -- IDX files ---------------------------------------------------------------------

def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path: Path, magic: int, dims: int) -> np.ndarray:
    if not path.exists():
        raise DatasetNotFound(f"dataset file not found: {path}")
    with _open(path) as fh:
        data = fh.read()
    header = 4 + 4 * dims
    if len(data) < header:
        raise TruncatedFile(f"{path}: header truncated")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    shape = struct.unpack(f">{dims}I", data[4:header])
    size = int(np.prod(shape))
    if len(data) < header + size:
        raise TruncatedFile(f"{path}: expected {size} bytes of data, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(shape)


def write_idx(path, array: np.ndarray) -> None:
    """Write uint8 images (N x H x W) or labels (N,) in IDX format; gzip when the name ends in .gz."""
    path = Path(path)
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}.get(array.ndim)
    if magic is None:
        raise DomainError(f"IDX writer supports 1-D labels or 3-D images, got {array.ndim}-D")
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_idx_dataset(images_path, labels_path, val_fraction: float = 0.2, seed: int = 0,
                     num_classes: int | None = None) -> Dataset:
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    y = labels.astype(np.int64)
    k = num_classes or int(y.max()) + 1
    return _split(x, y, max(k, 2), val_fraction, rng_from_seed(seed, 2), "idx")
