"""Self-describing checkpoint container.

Layout::

    b"MLPICONV" | u8 version | u64-le header length | JSON header | tensor bytes

The header (sorted keys, no timestamps) holds the model config, seed, run
metadata and an index of tensors ``{name, group, shape, offset}``. Tensor
data is little-endian float64, concatenated in index order, so the same
parameters always serialize to the same bytes.
"""
import json
import struct
from pathlib import Path

import numpy as np

from mlpiconv.errors import DataError
from mlpiconv.model import IConvConfig, ModelParams

MAGIC = b"MLPICONV"
VERSION = 1


def to_bytes(cfg: IConvConfig, params: ModelParams, seed=None, metadata=None):
    index, chunks, offset = [], [], 0
    for group, tensors in (("weights", params.weights), ("buffers", params.buffers)):
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index.append({"name": name, "group": group, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {
        "config": cfg.to_dict(),
        "seed": seed,
        "metadata": metadata or {},
        "tensors": index,
        "dtype": "<f8",
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<BQ", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(blob: bytes):
    if blob[:len(MAGIC)] != MAGIC:
        raise DataError("not an mlpiconv checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<BQ", blob, len(MAGIC))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<BQ")
    header = json.loads(blob[start:start + hlen])
    data = memoryview(blob)[start + hlen:]
    params = ModelParams()
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=t["offset"]).reshape(t["shape"])
        getattr(params, t["group"])[t["name"]] = arr.astype(np.float64)
    cfg = IConvConfig.from_dict(header["config"])
    return cfg, params, header


def save(path, cfg, params, seed=None, metadata=None):
    Path(path).write_bytes(to_bytes(cfg, params, seed, metadata))


def load(path):
    """Returns (config, params, header)."""
    return from_bytes(Path(path).read_bytes())
