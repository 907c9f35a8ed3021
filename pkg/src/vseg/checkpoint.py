"""Self-describing binary checkpoint container.

Layout (little-endian throughout): magic ``VSEG``, format version u32,
tensor record count u32, then per tensor a length-prefixed name, dtype
code (u8: 0=float32, 1=float64), ndim u8, dims u32 each, payload length
u64 and the raw buffer. A trailing u64-length-prefixed UTF-8 JSON block
carries the network config, normalization statistics and training
metadata. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor
from .preprocess import NormalizationStats
from .unet import Model, UNetConfig

MAGIC = b"VSEG"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _write_tensor(f, name, arr):
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
    name_b = name.encode("utf-8")
    f.write(struct.pack("<H", len(name_b)))
    f.write(name_b)
    f.write(struct.pack("<BB", code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    f.write(struct.pack("<Q", len(payload)))
    f.write(payload)


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptCheckpointError(
            f"truncated checkpoint: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _read_tensor(f):
    (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
    name = _read_exact(f, name_len, "tensor name").decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(f, 2, "dtype/ndim"))
    if code not in _CODE_DTYPES:
        raise CorruptCheckpointError(f"unknown dtype code {code} for tensor {name!r}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape"))
    (nbytes,) = struct.unpack("<Q", _read_exact(f, 8, "payload length"))
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if nbytes != expected:
        raise CorruptCheckpointError(
            f"tensor {name!r}: payload length {nbytes} does not match shape {shape}")
    data = np.frombuffer(_read_exact(f, nbytes, f"tensor {name!r} data"), dtype=dtype)
    return name, data.reshape(shape).copy()


def save_checkpoint(model, norm_stats, path, training_meta=None):
    """Write model parameters, batch-norm running stats, normalization
    statistics and topology config to ``path``."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        n_tensors = len(model.params) + len(model.bn_stats)
        f.write(struct.pack("<I", n_tensors))
        for name in sorted(model.params):
            _write_tensor(f, name, model.params[name].data)
        for name in sorted(model.bn_stats):
            _write_tensor(f, name, model.bn_stats[name])
        meta = {
            "config": {
                "in_channels": model.config.in_channels,
                "base_channels": model.config.base_channels,
                "levels": model.config.levels,
                "out_channels": model.config.out_channels,
            },
            "dtype": "float64" if model.dtype == np.float64 else "float32",
            "param_names": sorted(model.params),
            "bn_stat_names": sorted(model.bn_stats),
            "norm_stats": None if norm_stats is None else {
                "mean": norm_stats.mean,
                "std": norm_stats.std,
                "cohort_size": norm_stats.cohort_size,
            },
            "training_meta": training_meta or {},
        }
        blob = json.dumps(meta).encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)


def load_checkpoint(path):
    """Read a checkpoint, returning (model, norm_stats, training_meta).

    Raises CorruptCheckpointError for malformed files and
    CheckpointVersionError for unsupported format versions.
    """
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CorruptCheckpointError(
                f"bad magic bytes {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "format version"))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint format version {version}, "
                f"this build reads version {FORMAT_VERSION}")
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(n_tensors):
            name, arr = _read_tensor(f)
            tensors[name] = arr
        (meta_len,) = struct.unpack("<Q", _read_exact(f, 8, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpointError(f"unreadable metadata block: {exc}") from exc

    cfg_d = meta.get("config", {})
    config = UNetConfig(
        in_channels=cfg_d.get("in_channels", 2),
        base_channels=cfg_d.get("base_channels", 32),
        levels=cfg_d.get("levels", 3),
        out_channels=cfg_d.get("out_channels", 1),
    )
    if config.in_channels != 2:
        raise CheckpointError(
            f"checkpoint declares {config.in_channels} input channels; "
            "this pipeline requires 2 (PET + prostate contour)")
    dtype = np.float64 if meta.get("dtype") == "float64" else np.float32

    params, bn_stats = {}, {}
    for name in meta.get("param_names", []):
        if name not in tensors:
            raise CorruptCheckpointError(f"metadata names missing tensor {name!r}")
        params[name] = Tensor(tensors[name], requires_grad=True)
    for name in meta.get("bn_stat_names", []):
        if name not in tensors:
            raise CorruptCheckpointError(f"metadata names missing tensor {name!r}")
        bn_stats[name] = tensors[name]

    model = Model(config, params, bn_stats, dtype)
    ns_d = meta.get("norm_stats")
    norm_stats = None
    if ns_d is not None:
        norm_stats = NormalizationStats(
            mean=ns_d["mean"], std=ns_d["std"], cohort_size=ns_d["cohort_size"])
    return model, norm_stats, meta.get("training_meta", {})
