"""Binary checkpoint format, magic "NDRM".

Layout, little-endian throughout: magic (4 bytes), version (u32), entry
count (u32); then per entry, sorted by name: name length (u16), name bytes
(utf-8), rank (u8), extents (u32 each), float32 values. Architecture
settings ride along as synthetic "config.*" entries so a checkpoint is
self-contained; save/load/save is byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import struct
from io import BufferedReader

import numpy as np

from .errors import FormatError
from .model import VARIANTS, ModelConfig, ModelParams

MAGIC = b"NDRM"
VERSION = 1

_CONFIG_INTS = (
    "embed_dim",
    "d_key",
    "d_value",
    "num_layers",
    "conv_window",
    "ffn_dim",
    "max_doc_len",
    "max_query_len",
)


def _config_entries(params: ModelParams) -> dict[str, np.ndarray]:
    cfg = params.config
    entries = {
        f"config.{name}": np.array([getattr(cfg, name)], dtype=np.float32)
        for name in _CONFIG_INTS
    }
    entries["config.kernel_mus"] = np.asarray(cfg.kernel_mus, dtype=np.float32)
    entries["config.kernel_sigmas"] = np.asarray(cfg.kernel_sigmas, dtype=np.float32)
    entries["config.variant"] = np.array([VARIANTS.index(cfg.variant)], dtype=np.float32)
    entries["config.vocab_size"] = np.array([params.vocab_size], dtype=np.float32)
    return entries


def serialize(params: ModelParams) -> bytes:
    entries = dict(params.arrays)
    entries.update(_config_entries(params))
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path: str, params: ModelParams) -> str:
    """Write atomically; returns the hex sha256 digest of the file bytes."""
    blob = serialize(params)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def _read_exact(f: BufferedReader, n: int, path: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("truncated checkpoint", path=path)
    return data


def deserialize_entries(blob: bytes, path: str = "<bytes>") -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", path=path)
    if len(blob) < 12:
        raise FormatError("truncated checkpoint", path=path)
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"checkpoint version {version}, expected {VERSION}", path=path)
    offset = 12
    entries: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError("truncated checkpoint", path=path)
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        entries[name] = values.copy()
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after last entry", path=path)
    return entries


def params_from_entries(entries: dict[str, np.ndarray], path: str = "<bytes>") -> ModelParams:
    config_vals = {k: entries.pop(k) for k in list(entries) if k.startswith("config.")}
    required = [f"config.{n}" for n in _CONFIG_INTS] + [
        "config.kernel_mus",
        "config.kernel_sigmas",
        "config.variant",
        "config.vocab_size",
    ]
    missing = [k for k in required if k not in config_vals]
    if missing:
        raise FormatError(f"checkpoint missing entries: {', '.join(missing)}", path=path)
    kwargs = {name: int(config_vals[f"config.{name}"][0]) for name in _CONFIG_INTS}
    variant_idx = int(config_vals["config.variant"][0])
    if not 0 <= variant_idx < len(VARIANTS):
        raise FormatError(f"unknown variant index {variant_idx}", path=path)
    config = ModelConfig(
        kernel_mus=tuple(float(x) for x in config_vals["config.kernel_mus"]),
        kernel_sigmas=tuple(float(x) for x in config_vals["config.kernel_sigmas"]),
        variant=VARIANTS[variant_idx],
        **kwargs,
    )
    return ModelParams(
        config=config,
        vocab_size=int(config_vals["config.vocab_size"][0]),
        arrays=entries,
    )


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    return params_from_entries(deserialize_entries(blob, path=path), path=path)


def checkpoint_digest(path: str) -> bytes:
    """sha256 of the checkpoint file, used to stamp indexes built from it."""
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).digest()
