import json
from pathlib import Path

import pytest

from satlens.errors import UnsupportedTopology
from satlens.nn.model import Model
from satlens.nn.receptive import receptive_field

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "arch"


def conv(k=3, s=1, p=1):
    return {"kind": "conv2d", "filters": 2, "kernel": k, "stride": s, "padding": p}


def test_single_and_stacked_3x3():
    assert receptive_field({"layers": [conv()]}).final == 3
    assert receptive_field({"layers": [conv(), {"kind": "relu"}, conv()]}).final == 5


def test_strides_multiply_jump():
    rf = receptive_field({"layers": [conv(3, 2), conv(3, 2), conv(3, 1)]})
    assert [e.size for e in rf.layers] == [3, 7, 15]
    assert [e.jump for e in rf.layers] == [2, 4, 4]


def test_maxpool_counts():
    rf = receptive_field({"layers": [conv(), {"kind": "maxpool", "kernel": 2}, conv()]})
    assert [e.size for e in rf.layers] == [3, 4, 8]


@pytest.mark.parametrize("name,expected", [("resnet18.json", 435), ("resnet18_nostem.json", 109)])
def test_resnet18_main_path(name, expected):
    arch = json.loads((CONFIGS / name).read_text())
    assert receptive_field(arch).final == expected


def test_marker_first_layer_exceeding_input():
    arch = {"layers": [conv(), conv(), conv(), {"kind": "global_avg_pool"}, {"kind": "dense", "units": 2}]}
    rf = receptive_field(arch, input_size=4)
    assert rf.marker == "conv2d2"
    assert receptive_field(arch, input_size=8).marker is None
    model = Model(arch, (1, 4, 4))
    assert receptive_field(model).marker == "conv2d2"


def test_tracking_stops_at_global_pooling():
    arch = {"layers": [conv(), {"kind": "global_avg_pool"}, {"kind": "dense", "units": 2}]}
    assert len(receptive_field(arch).layers) == 1


def test_non_sequential_rejected():
    with pytest.raises(UnsupportedTopology):
        receptive_field({"topology": "residual", "layers": [conv()]})
