import numpy as np
import pytest

from stegact.errors import ConfigError, DataError
from stegact.tensorio import (
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    load_tensor,
    save_checkpoint,
    save_tensor,
)


@pytest.mark.parametrize(
    "array",
    [
        np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32),
        np.random.default_rng(1).standard_normal((2, 2)).astype(np.float64),
        (np.random.default_rng(2).random((4, 4, 3)) * 255).astype(np.uint8),
        np.arange(10, dtype=np.int64),
        np.array(7, dtype=np.int64),  # 0-dim, as in batch-norm step counters
    ],
)
def test_container_round_trip(tmp_path, array):
    path = tmp_path / "t.tns"
    save_tensor(path, array)
    back = load_tensor(path)
    assert back.dtype == array.dtype
    np.testing.assert_array_equal(back, array)


def test_container_is_deterministic():
    arr = np.random.default_rng(3).standard_normal((4, 4)).astype(np.float32)
    assert encode_tensor(arr) == encode_tensor(arr)


def test_decode_rejects_bad_magic():
    with pytest.raises(DataError, match="magic"):
        decode_tensor(b"XXXX" + b"\x00" * 32)


def test_load_missing_file():
    with pytest.raises(DataError, match="not found"):
        load_tensor("/nonexistent/t.tns")


def test_checkpoint_round_trip(tmp_path):
    params = {
        "layer.weight": np.random.default_rng(4).standard_normal((3, 3)).astype(np.float32),
        "layer.bias": np.zeros(3, dtype=np.float32),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, fingerprint="abc123", config={"width": 16})
    loaded, manifest = load_checkpoint(path, expected_fingerprint="abc123")
    assert manifest["config"]["width"] == 16
    assert set(loaded) == set(params)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])


def test_checkpoint_refuses_fingerprint_mismatch(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.zeros(2, dtype=np.float32)}, fingerprint="aaa")
    with pytest.raises(ConfigError, match="fingerprint"):
        load_checkpoint(path, expected_fingerprint="bbb")
