"""On-disk formats: BOATT tensors, JSON configs, CSV/PGM reports.

A BOATT file is a single tensor: magic ``BOAT``, u32 version (currently 1),
u8 dtype code (0 = float32, 1 = float64), u8 rank, rank u32 extents, then
the row-major little-endian payload.  Every field is validated on read and
the payload length must match the extents exactly.

Model weights travel as one rank-1 BOATT tensor holding every parameter
raveled and concatenated in the canonical order of
:func:`boat.model.parameter_specs`.
"""

import json
import struct

import numpy as np

from .model import ModelConfig, count_params, parameter_specs, parameter_tensors

MAGIC = b"BOAT"
VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_MAX_RANK = 8


class BoattError(ValueError):
    """Malformed BOATT file or tensor unsuitable for the format."""


class ConfigError(ValueError):
    """Malformed or inconsistent JSON configuration."""


def write_tensor(path, array):
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODE:
        raise BoattError(f"dtype {arr.dtype} not storable (float32/float64 only)")
    if arr.ndim < 1 or arr.ndim > _MAX_RANK:
        raise BoattError(f"rank {arr.ndim} outside [1, {_MAX_RANK}]")
    if any(e <= 0 or e > 0xFFFFFFFF for e in arr.shape):
        raise BoattError(f"extents {arr.shape} outside u32 range")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBB", VERSION, _DTYPE_CODE[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10:
        raise BoattError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise BoattError(f"{path}: bad magic {blob[:4]!r}")
    version, code, rank = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise BoattError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPE:
        raise BoattError(f"{path}: unknown dtype code {code}")
    if rank < 1 or rank > _MAX_RANK:
        raise BoattError(f"{path}: rank {rank} outside [1, {_MAX_RANK}]")
    if len(blob) < 10 + 4 * rank:
        raise BoattError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{rank}I", blob, 10)
    if any(e == 0 for e in shape):
        raise BoattError(f"{path}: zero extent in {shape}")
    dtype = _CODE_DTYPE[code]
    count = 1
    for e in shape:
        count *= e
    want = 10 + 4 * rank + count * dtype.itemsize
    if len(blob) != want:
        raise BoattError(f"{path}: payload is {len(blob) - 10 - 4 * rank} bytes, "
                         f"extents {shape} require {count * dtype.itemsize}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=10 + 4 * rank)
    return np.ascontiguousarray(data.astype(dtype.newbyteorder("="))).reshape(shape)


def save_weights(path, cfg, params):
    """Write all parameters as one flat rank-1 tensor in canonical order."""
    parts = [np.ascontiguousarray(arr).ravel()
             for _, arr in parameter_tensors(cfg, params)]
    write_tensor(path, np.concatenate(parts))


def load_weights(path, cfg, dtype=None):
    """Read a flat weight vector and rebuild the named tensor dict.

    The vector length must equal ``count_params(cfg)`` exactly.  Returns a
    dict name -> array ready for :func:`boat.model._assemble`.
    """
    flat = read_tensor(path)
    if flat.ndim != 1:
        raise BoattError(f"{path}: weights must be rank 1, got rank {flat.ndim}")
    want = count_params(cfg)
    if flat.shape[0] != want:
        raise BoattError(f"{path}: {flat.shape[0]} scalars, config needs {want}")
    if dtype is not None:
        flat = flat.astype(dtype, copy=False)
    tensors = {}
    offset = 0
    for name, shape, _ in parameter_specs(cfg):
        size = int(np.prod(shape))
        tensors[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return tensors


def load_model_params(path, cfg, dtype=None):
    from .model import _assemble
    return _assemble(cfg, load_weights(path, cfg, dtype))


# ---------------------------------------------------------------------------
# JSON config

_REQUIRED = {"height": int, "width": int, "channels": int,
             "depths": list, "heads": list, "window_size": int,
             "num_classes": int}
_OPTIONAL = {"mlp_ratio": int, "target_cluster_size": int, "overlap": int,
             "fsla_layout": str, "cluster_iters": int, "ranking_mode": str,
             "cluster_on": str}


def load_model_config(path):
    """Strict JSON -> ModelConfig: unknown keys and wrong types are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(_REQUIRED) - set(doc)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")
    kwargs = {}
    for key, value in doc.items():
        want = _REQUIRED.get(key) or _OPTIONAL[key]
        if want is int and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{path}: {key} must be an integer")
        if want is str and not isinstance(value, str):
            raise ConfigError(f"{path}: {key} must be a string")
        if want is list:
            if (not isinstance(value, list) or len(value) != 4
                    or not all(isinstance(v, int) and not isinstance(v, bool)
                               for v in value)):
                raise ConfigError(f"{path}: {key} must be a list of 4 integers")
            value = tuple(value)
        kwargs[key] = value
    try:
        return ModelConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_model_config(path, cfg):
    doc = {"height": cfg.height, "width": cfg.width, "channels": cfg.channels,
           "depths": list(cfg.depths), "heads": list(cfg.heads),
           "window_size": cfg.window_size, "num_classes": cfg.num_classes,
           "mlp_ratio": cfg.mlp_ratio,
           "target_cluster_size": cfg.target_cluster_size,
           "overlap": cfg.overlap, "fsla_layout": cfg.fsla_layout,
           "cluster_iters": cfg.cluster_iters, "ranking_mode": cfg.ranking_mode,
           "cluster_on": cfg.cluster_on}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# report writers

def write_levels_csv(path, level_maps):
    """token_index,level,cluster_index rows, one block per id map."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("token_index,level,cluster_index\n")
        for level, mapping in enumerate(level_maps):
            for tok in range(len(mapping)):
                fh.write(f"{tok},{level},{int(mapping[tok])}\n")


def write_assignment_csv(path, assignment):
    """All hierarchy levels of a clustering assignment as CSV."""
    write_levels_csv(path, assignment.levels)


def write_pgm(path, ids_2d, num_ids):
    """Binary PGM (P5, maxval 255) visualizing an id map on the token grid."""
    ids = np.asarray(ids_2d)
    if ids.ndim != 2:
        raise ValueError("ids_2d must be 2-D")
    h, w = ids.shape
    scale = 255 // max(1, num_ids - 1)
    gray = np.clip(ids * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_stats(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
