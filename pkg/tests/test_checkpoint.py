import json
import struct

import numpy as np
import pytest

from vicnet.errors import DataError
from vicnet.models import build_mobile_unet, build_unet
from vicnet.nn.checkpoint import MAGIC, Checkpoint
from vicnet.nn.graph import forward


@pytest.fixture(params=["unet", "mobile-unet"])
def ckpt(request):
    spec = (build_unet if request.param == "unet" else build_mobile_unet)()
    params = spec.graph.init_params(np.random.default_rng(0))
    params.trainable[next(iter(params.values))] = False
    return Checkpoint(spec.arch, spec.graph, params, {"delta_q": 1.2675}, {"seed": 0})


def test_round_trip(ckpt, tmp_path):
    ckpt.save(tmp_path / "m.ckpt")
    back = Checkpoint.load(tmp_path / "m.ckpt")
    assert back.arch == ckpt.arch and back.norm == ckpt.norm and back.meta == ckpt.meta
    assert back.params.trainable == ckpt.params.trainable
    for k, v in ckpt.params.values.items():
        assert back.params.values[k].dtype == np.float32
        assert np.array_equal(back.params.values[k], v)
    x = np.random.default_rng(1).standard_normal((2, 2, 128)).astype(np.float32)
    assert np.array_equal(forward(ckpt.graph, ckpt.params, x), forward(back.graph, back.params, x))


def test_bytes_deterministic(ckpt):
    assert ckpt.to_bytes() == Checkpoint.from_bytes(ckpt.to_bytes()).to_bytes()


def test_layout_is_self_describing(ckpt):
    blob = ckpt.to_bytes()
    assert blob[:8] == MAGIC
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + n])
    assert header["format_version"] == 1
    last = header["params"][-1]
    payload = blob[12 + n:]
    assert len(payload) == last["offset"] + 4 * int(np.prod(last["shape"]))
    first = header["params"][0]
    arr = np.frombuffer(payload[:4 * int(np.prod(first["shape"]))], dtype="<f4")
    assert np.array_equal(arr, ckpt.params.values[first["name"]].ravel())


def test_corrupt(ckpt, tmp_path):
    with pytest.raises(DataError):
        Checkpoint.from_bytes(b"garbage-bytes-here")
    with pytest.raises(DataError):
        Checkpoint.from_bytes(ckpt.to_bytes()[:-8])
    with pytest.raises(DataError):
        Checkpoint.load(tmp_path / "missing.ckpt")
