"""Bit-exact binary file formats.

All headers are little-endian with fixed-width fields, so golden files are
portable across platforms. Every loader validates magic, version, declared
lengths, and the in-memory invariants of what it builds; every loadable
file re-serializes to identical bytes.

Tensor container ("TERN"):   magic(4) version(u16) dtype(u8) rank(u8)
                             dims(u32 each) payload
    dtype 0 = float32, 1 = trit planes (plus then minus, LSB-first rows),
    2 = uint8.

Packed layer record ("TPKD"): magic(4) version(u16) rows(u32) cols(u32)
                              gamma(f32) bias_present(u8)
                              plus_plane minus_plane [bias f32*rows]

Vector dataset:               count(u32) dim(u32) then count*dim f32.

Model checkpoint:             concatenated records (TERN and/or TPKD) plus
                              a JSON sidecar at <path>.json naming each
                              entry in order and carrying the config and a
                              SHA-256 of the binary file.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import (EncoderConfig, EncoderModel, LinearLayer, MODE_FULL,
                      MODE_TERNARY, PackedEncoder, ResidualBlock)
from .packed import (PACKED_RECORD_HEADER_BYTES, PackedTernaryMatrix,
                     PlaneIntegrityError, row_bytes)
from .tensor import FLOAT

MAGIC_TENSOR = b"TERN"
MAGIC_PACKED = b"TPKD"
FORMAT_VERSION = 1

DTYPE_F32 = 0
DTYPE_TRIT_PLANES = 1
DTYPE_U8 = 2

CHECKPOINT_FORMAT = "ternkit-checkpoint"


class FormatError(Exception):
    """Base for all on-disk format failures."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class IntegrityError(FormatError):
    pass


class ConfigError(FormatError):
    pass


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def _expect_magic(f, magic: bytes) -> None:
    got = _read_exact(f, 4, "magic")
    if got != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {got!r}")


def _read_version(f) -> None:
    (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")


# -- tensor container ----------------------------------------------------------

@dataclass
class TritPlanes:
    """Payload of a dtype-1 container: the two planes without scale or bias."""
    rows: int
    cols: int
    plus_plane: np.ndarray
    minus_plane: np.ndarray


def write_tensor(f, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim < 1:
        raise ValueError("0-dimensional tensors are rejected")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got {arr.shape}")
    if arr.dtype == np.float32:
        code, payload = DTYPE_F32, arr.astype("<f4").tobytes(order="C")
    elif arr.dtype == np.uint8:
        code, payload = DTYPE_U8, arr.tobytes(order="C")
    else:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    f.write(MAGIC_TENSOR)
    f.write(struct.pack("<HBB", FORMAT_VERSION, code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(payload)


def write_trit_planes(f, tp: TritPlanes) -> None:
    nbytes = row_bytes(tp.cols)
    for plane in (tp.plus_plane, tp.minus_plane):
        if plane.dtype != np.uint8 or plane.shape != (tp.rows, nbytes):
            raise ValueError("planes must be uint8 with shape (rows, ceil(cols/8))")
    f.write(MAGIC_TENSOR)
    f.write(struct.pack("<HBB", FORMAT_VERSION, DTYPE_TRIT_PLANES, 2))
    f.write(struct.pack("<2I", tp.rows, tp.cols))
    f.write(tp.plus_plane.tobytes(order="C"))
    f.write(tp.minus_plane.tobytes(order="C"))


def read_tensor(f):
    """Read one container; returns an ndarray or a TritPlanes."""
    _expect_magic(f, MAGIC_TENSOR)
    _read_version(f)
    code, rank = struct.unpack("<BB", _read_exact(f, 2, "dtype/rank"))
    if rank < 1:
        raise IntegrityError("rank must be >= 1")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
    if any(d < 1 for d in dims):
        raise IntegrityError(f"all dims must be >= 1, got {dims}")
    if code == DTYPE_F32:
        count = int(np.prod(dims))
        payload = _read_exact(f, 4 * count, "f32 payload")
        return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if code == DTYPE_U8:
        count = int(np.prod(dims))
        payload = _read_exact(f, count, "u8 payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()
    if code == DTYPE_TRIT_PLANES:
        if rank != 2:
            raise IntegrityError("trit-plane containers must be rank 2")
        rows, cols = dims
        nbytes = row_bytes(cols)
        plus = np.frombuffer(_read_exact(f, rows * nbytes, "plus plane"),
                             dtype=np.uint8).reshape(rows, nbytes).copy()
        minus = np.frombuffer(_read_exact(f, rows * nbytes, "minus plane"),
                              dtype=np.uint8).reshape(rows, nbytes).copy()
        return TritPlanes(rows, cols, plus, minus)
    raise FormatError(f"unknown dtype code {code}")


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path):
    with open(path, "rb") as f:
        out = read_tensor(f)
        if f.read(1):
            raise IntegrityError("trailing bytes after tensor container")
    return out


# -- packed layer record ---------------------------------------------------------

def write_packed_layer(f, p: PackedTernaryMatrix) -> None:
    f.write(MAGIC_PACKED)
    f.write(struct.pack("<HII", FORMAT_VERSION, p.rows, p.cols))
    f.write(struct.pack("<f", p.gamma))
    f.write(struct.pack("<B", 1 if p.bias is not None else 0))
    f.write(p.plus_plane.tobytes(order="C"))
    f.write(p.minus_plane.tobytes(order="C"))
    if p.bias is not None:
        f.write(p.bias.astype("<f4").tobytes(order="C"))


def read_packed_layer(f) -> PackedTernaryMatrix:
    _expect_magic(f, MAGIC_PACKED)
    _read_version(f)
    rows, cols = struct.unpack("<II", _read_exact(f, 8, "rows/cols"))
    if rows < 1 or cols < 1:
        raise IntegrityError(f"dimensions must be positive, got {rows}x{cols}")
    (gamma,) = struct.unpack("<f", _read_exact(f, 4, "gamma"))
    (bias_flag,) = struct.unpack("<B", _read_exact(f, 1, "bias flag"))
    if bias_flag not in (0, 1):
        raise IntegrityError(f"bias flag must be 0 or 1, got {bias_flag}")
    nbytes = row_bytes(cols)
    plus = np.frombuffer(_read_exact(f, rows * nbytes, "plus plane"),
                         dtype=np.uint8).reshape(rows, nbytes).copy()
    minus = np.frombuffer(_read_exact(f, rows * nbytes, "minus plane"),
                          dtype=np.uint8).reshape(rows, nbytes).copy()
    bias = None
    if bias_flag:
        bias = np.frombuffer(_read_exact(f, 4 * rows, "bias"),
                             dtype="<f4").astype(np.float32)
    try:
        return PackedTernaryMatrix(rows, cols, plus, minus, gamma, bias)
    except PlaneIntegrityError as e:
        raise IntegrityError(str(e)) from e
    except ValueError as e:
        raise IntegrityError(str(e)) from e


def save_packed_layer(path, p: PackedTernaryMatrix) -> None:
    with open(path, "wb") as f:
        write_packed_layer(f, p)


def load_packed_layer(path) -> PackedTernaryMatrix:
    with open(path, "rb") as f:
        out = read_packed_layer(f)
        if f.read(1):
            raise IntegrityError("trailing bytes after packed layer record")
    return out


def packed_record_bytes(p: PackedTernaryMatrix) -> int:
    """Size write_packed_layer will produce; header is 15 bytes plus gamma."""
    planes = 2 * p.rows * row_bytes(p.cols)
    bias = 4 * p.rows if p.bias is not None else 0
    return PACKED_RECORD_HEADER_BYTES + 4 + planes + bias


# -- vector dataset --------------------------------------------------------------

def save_vectors(path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=FLOAT)
    if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
        raise ValueError(f"vectors must be non-empty 2-D, got {vectors.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        f.write(vectors.astype("<f4").tobytes(order="C"))


def load_vectors(path) -> np.ndarray:
    with open(path, "rb") as f:
        count, dim = struct.unpack("<II", _read_exact(f, 8, "dataset header"))
        if count < 1 or dim < 1:
            raise IntegrityError(f"count and dim must be positive, got {count}, {dim}")
        payload = _read_exact(f, 4 * count * dim, "dataset payload")
        if f.read(1):
            raise IntegrityError("trailing bytes after vector dataset")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float32)


# -- model checkpoints ------------------------------------------------------------

def _sidecar_path(path) -> str:
    return str(path) + ".json"


def _write_sidecar(path, meta: dict) -> None:
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(path, model: EncoderModel) -> None:
    """Full-precision checkpoint: every parameter as an f32 container."""
    params = model.parameters()
    with open(path, "wb") as f:
        for arr in params.values():
            write_tensor(f, np.ascontiguousarray(arr, dtype=FLOAT))
    modes = {layer.mode for _, layer in model.linear_layers()}
    betas = {layer.beta for _, layer in model.linear_layers()}
    _write_sidecar(path, {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "mode": "dense",
        "linear_mode": modes.pop() if len(modes) == 1 else MODE_FULL,
        "beta": betas.pop() if len(betas) == 1 else 2.0,
        "normalize": bool(model.normalize),
        "config": model.config.to_dict(),
        "entries": [{"name": name, "kind": "tensor"} for name in params],
        "sha256": _file_sha256(path),
    })


def save_ternary_checkpoint(path, model: EncoderModel) -> None:
    """Exported ternary checkpoint: packed linears, norms kept full-precision."""
    entries = []
    with open(path, "wb") as f:
        layers = dict(model.linear_layers())
        write_packed_layer(f, layers["input_proj"].ternary_export())
        entries.append({"name": "input_proj", "kind": "packed"})
        for i, blk in enumerate(model.blocks):
            write_tensor(f, blk.ln_gain)
            entries.append({"name": f"blocks.{i}.ln_gain", "kind": "tensor"})
            write_tensor(f, blk.ln_shift)
            entries.append({"name": f"blocks.{i}.ln_shift", "kind": "tensor"})
            write_packed_layer(f, blk.fc1.ternary_export())
            entries.append({"name": f"blocks.{i}.fc1", "kind": "packed"})
            write_packed_layer(f, blk.fc2.ternary_export())
            entries.append({"name": f"blocks.{i}.fc2", "kind": "packed"})
        write_packed_layer(f, layers["output_proj"].ternary_export())
        entries.append({"name": "output_proj", "kind": "packed"})
    _write_sidecar(path, {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "mode": "packed",
        "normalize": bool(model.normalize),
        "config": model.config.to_dict(),
        "entries": entries,
        "sha256": _file_sha256(path),
    })


def _load_sidecar(path) -> dict:
    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise ConfigError(f"missing checkpoint sidecar {sidecar}")
    try:
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed sidecar JSON: {e}") from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a checkpoint sidecar: {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path):
    """Load a checkpoint; dense sidecars give an EncoderModel, packed a PackedEncoder."""
    meta = _load_sidecar(path)
    if _file_sha256(path) != meta["sha256"]:
        raise IntegrityError("checkpoint bytes do not match the recorded checksum")
    try:
        config = EncoderConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad config in sidecar: {e}") from e
    records = {}
    with open(path, "rb") as f:
        for entry in meta["entries"]:
            if entry["kind"] == "tensor":
                records[entry["name"]] = read_tensor(f)
            elif entry["kind"] == "packed":
                records[entry["name"]] = read_packed_layer(f)
            else:
                raise ConfigError(f"unknown entry kind {entry['kind']!r}")
        if f.read(1):
            raise IntegrityError("trailing bytes after checkpoint records")

    if meta["mode"] == "dense":
        return _assemble_dense(config, meta, records)
    if meta["mode"] == "packed":
        ln = [(records[f"blocks.{i}.ln_gain"], records[f"blocks.{i}.ln_shift"])
              for i in range(config.num_blocks)]
        packed = [records["input_proj"]]
        for i in range(config.num_blocks):
            packed.append(records[f"blocks.{i}.fc1"])
            packed.append(records[f"blocks.{i}.fc2"])
        packed.append(records["output_proj"])
        # from_model ordering: input, (fc1, fc2)*blocks, output
        return PackedEncoder(config, packed, ln, normalize=meta.get("normalize", False))
    raise ConfigError(f"unknown checkpoint mode {meta['mode']!r}")


def _assemble_dense(config: EncoderConfig, meta: dict, records: dict) -> EncoderModel:
    mode = meta.get("linear_mode", MODE_FULL)
    if mode not in (MODE_FULL, MODE_TERNARY):
        raise ConfigError(f"unknown linear mode {mode!r}")
    beta = float(meta.get("beta", 2.0))

    def linear(prefix):
        try:
            return LinearLayer(records[f"{prefix}.weight"], records[f"{prefix}.bias"],
                               mode=mode, beta=beta)
        except KeyError as e:
            raise ConfigError(f"checkpoint missing entry {e}") from e

    try:
        blocks = [ResidualBlock(records[f"blocks.{i}.ln_gain"],
                                records[f"blocks.{i}.ln_shift"],
                                linear(f"blocks.{i}.fc1"), linear(f"blocks.{i}.fc2"))
                  for i in range(config.num_blocks)]
    except KeyError as e:
        raise ConfigError(f"checkpoint missing entry {e}") from e
    model = EncoderModel(config, linear("input_proj"), blocks, linear("output_proj"),
                         normalize=meta.get("normalize", False))
    for name, arr in model.parameters().items():
        if arr.shape != records[name].shape:
            raise IntegrityError(f"shape mismatch for {name}")
    return model


def checkpoint_total_bytes(path) -> int:
    """Binary plus sidecar footprint of a saved checkpoint."""
    return os.path.getsize(path) + os.path.getsize(_sidecar_path(path))
