"""Binary tensor container and checkpoint files.

Container layout (little-endian throughout):

    bytes 0..3   magic b"TNS1"
    byte  4      dtype code (0=float32, 1=float64, 2=uint8, 3=int64)
    byte  5      rank
    next  8*rank shape, one uint64 per dimension
    rest         raw C-order payload

A checkpoint is one file holding a flat name->tensor dictionary:

    bytes 0..3   magic b"CKP1"
    bytes 4..7   uint32 manifest length
    manifest     UTF-8 JSON: {"fingerprint", "config", "entries": [{name, shape, dtype}]}
    blobs        one container blob per entry, in manifest order

Loading refuses a checkpoint whose fingerprint does not match the caller's
expectation.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MAGIC_TENSOR = b"TNS1"
MAGIC_CHECKPOINT = b"CKP1"

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint8): 2,
    np.dtype(np.int64): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode_tensor(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    header = MAGIC_TENSOR + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    # ascontiguousarray would promote 0-dim arrays to 1-dim, so flatten instead
    flat = np.ascontiguousarray(arr).reshape(-1)
    payload = flat.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    return header + payload


def decode_tensor(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one container blob starting at `offset`; returns (array, next offset)."""
    if blob[offset : offset + 4] != MAGIC_TENSOR:
        raise DataError(f"bad tensor magic at offset {offset}")
    code, rank = struct.unpack_from("<BB", blob, offset + 4)
    if code not in _CODE_DTYPES:
        raise DataError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{rank}Q", blob, offset + 6)
    dtype = _CODE_DTYPES[code]
    start = offset + 6 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    nbytes = count * dtype.itemsize
    data = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), count=count, offset=start)
    return data.astype(dtype).reshape(shape), start + nbytes


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"tensor container not found: {path}")
    array, _ = decode_tensor(path.read_bytes())
    return array


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    fingerprint: str,
    config: dict | None = None,
) -> None:
    entries = []
    blobs = []
    for name in sorted(params):
        arr = np.asarray(params[name])
        blobs.append(encode_tensor(arr))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
    manifest = json.dumps(
        {"fingerprint": fingerprint, "config": config or {}, "entries": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_CHECKPOINT)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(
    path: str | Path, expected_fingerprint: str | None = None
) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (params, manifest). Raises ConfigError on fingerprint mismatch."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC_CHECKPOINT:
        raise DataError(f"bad checkpoint magic in {path}")
    (manifest_len,) = struct.unpack_from("<I", blob, 4)
    manifest = json.loads(blob[8 : 8 + manifest_len].decode("utf-8"))
    if expected_fingerprint is not None and manifest["fingerprint"] != expected_fingerprint:
        raise ConfigError(
            f"checkpoint fingerprint {manifest['fingerprint']} does not match "
            f"expected {expected_fingerprint}"
        )
    params: dict[str, np.ndarray] = {}
    offset = 8 + manifest_len
    for entry in manifest["entries"]:
        arr, offset = decode_tensor(blob, offset)
        if list(arr.shape) != entry["shape"]:
            raise DataError(f"shape mismatch for {entry['name']} in {path}")
        params[entry["name"]] = arr
    return params, manifest
