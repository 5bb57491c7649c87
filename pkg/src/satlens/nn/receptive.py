"""Receptive-field sizes along a sequential convolutional stack."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import UnsupportedTopology


@dataclass(frozen=True)
class RFEntry:
    index: int
    kind: str
    name: str
    size: int
    jump: int


@dataclass(frozen=True)
class ReceptiveField:
    layers: list[RFEntry]
    input_size: int | None
    marker: str | None

    @property
    def final(self) -> int:
        return self.layers[-1].size if self.layers else 1

    def size_of(self, name: str) -> int:
        for entry in self.layers:
            if entry.name == name:
                return entry.size
        raise KeyError(name)


def receptive_field(arch, input_size: int | None = None) -> ReceptiveField:
    """Receptive field after every conv2d / maxpool layer.

    ``arch`` is an architecture config dict or a built model. The marker names
    the first layer whose receptive field exceeds ``input_size`` (the larger
    input side), or is ``None``. Spatial tracking stops at the first pooling
    layer that collapses the feature map (global/adaptive pooling, flatten).
    """
    if hasattr(arch, "arch"):
        if input_size is None and len(arch.input_shape) == 3:
            input_size = max(arch.input_shape[1:])
        arch = arch.arch
    if arch.get("topology", "sequential") != "sequential":
        raise UnsupportedTopology("receptive fields are only defined here for single-path networks")
    size, jump = 1, 1
    entries = []
    counters: dict[str, int] = {}
    marker = None
    for i, spec in enumerate(arch["layers"]):
        kind = spec["kind"]
        if kind in ("global_avg_pool", "adaptive_avg_pool", "flatten", "dense"):
            break
        if kind not in ("conv2d", "maxpool"):
            continue
        kernel = spec.get("kernel", 2 if kind == "maxpool" else 1)
        stride = spec.get("stride", kernel if kind == "maxpool" else 1)
        size += (kernel - 1) * jump
        jump *= stride
        counters[kind] = counters.get(kind, 0) + 1
        name = spec.get("name", f"{kind}{counters[kind]}")
        entries.append(RFEntry(i, kind, name, size, jump))
        if marker is None and input_size is not None and size > input_size:
            marker = name
    return ReceptiveField(entries, input_size, marker)
