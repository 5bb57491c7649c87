"""Sequential models built from JSON-style architecture configs.

An architecture config looks like::

    {"topology": "sequential",
     "layers": [{"kind": "conv2d", "filters": 16, "kernel": 3, "padding": 1},
                {"kind": "batchnorm"}, {"kind": "relu"},
                {"kind": "global_avg_pool"},
                {"kind": "dense", "units": 3}]}

Analysis points (PCA layers) are inserted after every dense/conv2d layer
except the last one, unless the config places ``pca_probe_point`` entries
itself. During training they pass activations through and optionally feed
the covariance accumulator; at evaluation time with ``projection_mode`` on
they project the activations onto the selected eigenspace.
"""

from __future__ import annotations

import copy

import numpy as np

from ..eigenspace import (
    AT_LEAST,
    Eigenspace,
    ProjectionOperator,
    project_conv,
    project_dense,
    projection_from_basis,
    projection_operator,
    select_eigenspace,
)
from ..errors import ConfigError, MissingEigenspace, ShapeMismatch, UnsupportedTopology
from ..numeric import EighResult, derive_seed, random_orthonormal_basis, rng_from_seed, sym_eigh
from ..stats import CovarianceAccumulator, nearest_downsample, unfold_conv
from .layers import (
    AdaptiveAvgPool2d,
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
)

LAYER_KINDS = (
    "dense", "conv2d", "relu", "maxpool", "batchnorm",
    "adaptive_avg_pool", "global_avg_pool", "flatten", "pca_probe_point",
)


class AnalysisPoint(Layer):
    """Pass-through layer that tracks the covariance of what flows through it."""

    kind = "pca_probe_point"

    def __init__(self, name: str, width: int, conv: bool, downsample_cap: int | None = None):
        super().__init__()
        self.name = name
        self.width = width
        self.conv = conv
        self.downsample_cap = downsample_cap
        self.accumulator = CovarianceAccumulator(width)
        self.covariance: np.ndarray | None = None
        self.eigh: EighResult | None = None
        self.eigenspace: Eigenspace | None = None
        self.operator: ProjectionOperator | None = None
        self.record = False
        self.project = False

    def observe(self, x: np.ndarray) -> None:
        if self.conv:
            if self.downsample_cap:
                x = nearest_downsample(x, self.downsample_cap)
            x = unfold_conv(x)
        self.accumulator.update(x.astype(np.float64))

    def forward(self, x, train):
        self.last = x
        if self.record:
            self.observe(x)
        if self.project and not train:
            if self.operator is None:
                raise MissingEigenspace(f"no projection operator at analysis point {self.name}")
            x64 = x.astype(np.float64)
            out = project_conv(x64, self.operator) if self.conv else project_dense(x64, self.operator)
            return out.astype(x.dtype)
        return x

    def backward(self, grad):
        return grad

    def finalize_epoch(self) -> None:
        """Turn the accumulated statistics into a covariance and its eigendecomposition."""
        self.covariance = self.accumulator.finalize()
        self.eigh = sym_eigh(self.covariance)

    def select(self, delta: float, policy: str = AT_LEAST) -> Eigenspace:
        if self.eigh is None:
            raise MissingEigenspace(f"no covariance has been computed at {self.name}")
        self.eigenspace = select_eigenspace(self.eigh, delta, policy)
        self.operator = projection_operator(self.eigenspace)
        return self.eigenspace


def _require(spec: dict, key: str, minimum: int = 1) -> int:
    if key not in spec:
        raise ConfigError(f"layer {spec.get('kind')!r} needs {key!r}")
    value = spec[key]
    if not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{spec['kind']}.{key} must be an integer >= {minimum}, got {value!r}")
    return value


def validate_architecture(arch: dict) -> list[dict]:
    if arch.get("topology", "sequential") != "sequential":
        raise UnsupportedTopology(f"only sequential topologies are supported, got {arch.get('topology')!r}")
    layers = arch.get("layers")
    if not isinstance(layers, list) or not layers:
        raise ConfigError("architecture needs a non-empty 'layers' list")
    for i, spec in enumerate(layers):
        kind = spec.get("kind")
        if kind not in LAYER_KINDS:
            raise ConfigError(f"layer {i}: unknown kind {kind!r}")
        if kind == "dense":
            _require(spec, "units")
        elif kind == "conv2d":
            _require(spec, "filters")
            _require(spec, "kernel")
            if "stride" in spec:
                _require(spec, "stride")
            if "padding" in spec:
                _require(spec, "padding", 0)
        elif kind == "maxpool":
            if "kernel" in spec:
                _require(spec, "kernel")
            if "stride" in spec:
                _require(spec, "stride")
        elif kind == "adaptive_avg_pool":
            _require(spec, "output")
        elif kind == "pca_probe_point":
            prev = layers[i - 1].get("kind") if i else None
            if prev not in ("dense", "conv2d"):
                raise ConfigError(f"layer {i}: analysis points may only follow dense or conv2d layers")
    return layers


class Model:
    """A sequential network plus its analysis points."""

    def __init__(self, arch: dict, input_shape, seed: int = 0, dtype=np.float32,
                 downsample_cap: int | None = None):
        self.arch = copy.deepcopy(arch)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        specs = validate_architecture(self.arch)
        explicit = any(s["kind"] == "pca_probe_point" for s in specs)
        weighted = [i for i, s in enumerate(specs) if s["kind"] in ("dense", "conv2d")]
        output_index = weighted[-1] if weighted else None

        rng = rng_from_seed(seed)
        self.layers: list[Layer] = []
        self.points: list[AnalysisPoint] = []
        shape = self.input_shape
        counters: dict[str, int] = {}
        last_name = None
        for i, spec in enumerate(specs):
            kind = spec["kind"]
            if kind == "pca_probe_point":
                self._add_point(last_name, shape, downsample_cap)
                continue
            layer = self._build(spec, shape, rng)
            shape = layer.output_shape(shape)
            layer.output = shape
            self.layers.append(layer)
            if kind in ("dense", "conv2d"):
                counters[kind] = counters.get(kind, 0) + 1
                last_name = f"{kind}{counters[kind]}"
                layer.name = last_name
                if not explicit and i != output_index:
                    self._add_point(last_name, shape, downsample_cap)
        self.output_shape = shape
        self.projection_mode = False

    def _add_point(self, name, shape, downsample_cap):
        conv = len(shape) == 3
        point = AnalysisPoint(name, shape[0], conv, downsample_cap)
        point.output = shape
        self.layers.append(point)
        self.points.append(point)

    def _build(self, spec: dict, shape, rng) -> Layer:
        kind = spec["kind"]
        dt = self.dtype
        if kind == "dense":
            if len(shape) != 1:
                raise ShapeMismatch(f"dense layer needs a flat input, got {shape}; add flatten or pooling")
            return Dense(shape[0], spec["units"], rng, dt)
        if kind == "conv2d":
            if len(shape) != 3:
                raise ShapeMismatch(f"conv2d needs a (C, H, W) input, got {shape}")
            return Conv2d(shape[0], spec["filters"], spec["kernel"], rng,
                          spec.get("stride", 1), spec.get("padding", 0), dt)
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            k = spec.get("kernel", 2)
            return MaxPool2d(k, spec.get("stride", k), spec.get("padding", 0))
        if kind == "batchnorm":
            return BatchNorm(shape[0], spec.get("momentum", 0.9), spec.get("eps", 1e-5), dt)
        if kind == "adaptive_avg_pool":
            out = spec["output"]
            return AdaptiveAvgPool2d(*(out if isinstance(out, list) else (out, out)))
        if kind == "global_avg_pool":
            return GlobalAvgPool()
        return Flatten()

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval", record: bool = False):
        """Run a batch through the network.

        Returns the logits and a dict mapping analysis-point names to the
        activations that reached them (before any projection).
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"batch of shape {x.shape[1:]} does not match input {self.input_shape}")
        train = mode == "train"
        x = x.astype(self.dtype, copy=False)
        for point in self.points:
            point.record = record
            point.project = self.projection_mode
        acts = {}
        for layer in self.layers:
            x = layer.forward(x, train)
            if isinstance(layer, AnalysisPoint):
                acts[layer.name] = layer.last
        for point in self.points:
            point.record = False
        return x, acts

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """Yield ``(layer_index, name, param, grad)`` for every trainable tensor."""
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield i, name, layer.params[name], layer.grads[name]

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out).argmax(axis=1)

    # -- analysis ------------------------------------------------------------

    def reset_statistics(self):
        for point in self.points:
            point.accumulator.reset()

    def finalize_statistics(self):
        for point in self.points:
            point.finalize_epoch()

    def select_eigenspaces(self, delta: float, policy: str = AT_LEAST) -> list[Eigenspace]:
        return [point.select(delta, policy) for point in self.points]

    def set_projection(self, on: bool):
        if on:
            missing = [p.name for p in self.points if p.operator is None]
            if missing:
                raise MissingEigenspace(f"no eigenspace at {', '.join(missing)}")
        self.projection_mode = on

    def set_random_projection(self, seed: int):
        """Replace each operator by a random projection of the same rank as its eigenspace."""
        for i, point in enumerate(self.points):
            if point.eigenspace is None:
                raise MissingEigenspace(f"no eigenspace at {point.name}")
            basis = random_orthonormal_basis(point.width, point.eigenspace.k, derive_seed(seed, i))
            point.operator = projection_from_basis(basis)

    def state_dict(self) -> dict:
        return {
            "params": [{k: v.tolist() for k, v in layer.params.items()} for layer in self.layers],
            "buffers": [{k: v.tolist() for k, v in layer.buffers.items()} for layer in self.layers],
            "covariances": {p.name: (p.covariance.tolist() if p.covariance is not None else None)
                            for p in self.points},
        }

    def load_state_dict(self, state: dict):
        if len(state["params"]) != len(self.layers):
            raise ShapeMismatch("checkpoint does not match the architecture")
        for layer, params, buffers in zip(self.layers, state["params"], state["buffers"]):
            for k, v in params.items():
                layer.params[k] = np.asarray(v, dtype=self.dtype).reshape(layer.params[k].shape)
            for k, v in buffers.items():
                layer.buffers[k] = np.asarray(v, dtype=self.dtype).reshape(layer.buffers[k].shape)
            layer.zero_grad()
        for point in self.points:
            cov = state.get("covariances", {}).get(point.name)
            if cov is not None:
                point.covariance = np.asarray(cov, dtype=np.float64)
                point.eigh = sym_eigh(point.covariance)


def set_random_projection(model: Model, seed: int):
    model.set_random_projection(seed)
