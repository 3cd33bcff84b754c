"""Portable binary checkpoint format.

A checkpoint file is laid out as:

    [8 bytes]  little-endian unsigned header length L
    [L bytes]  UTF-8 JSON header:
                 {"tensors": {name: {"dtype": "F32"|"F64",
                                     "shape": [...],
                                     "offsets": [start, end]}, ...},
                  "metadata": {str: str, ...}}
    [rest]     concatenated little-endian element buffers, row-major

Offsets are relative to the start of the data section. Tensor order in the
file equals the order of the "tensors" object and round-trips exactly.
Saving is deterministic: the same checkpoint value always produces the same
bytes (metadata keys are sorted; tensor order is part of the value).

Only F32 and F64 element types are supported. Metadata values are plain
strings; numeric values are parsed where they are used.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPE_TO_NUMPY = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
NUMPY_TO_DTYPE = {np.dtype("float32"): "F32", np.dtype("float64"): "F64"}

# Optional metadata keys with toolkit-level meaning.
META_LAYER_ORDER = "layer_order"   # JSON list of layer-group prefixes
META_PERFORMANCE = "performance"   # decimal string, e.g. "46.9"
META_MODEL_ID = "model_id"


class CheckpointError(Exception):
    """Base class for checkpoint validation and format errors."""


class CheckpointFormatError(CheckpointError):
    """Raised when a file cannot be parsed as a checkpoint."""


@dataclass(frozen=True)
class TensorRecord:
    """A named tensor. The array owns dtype and shape; data is row-major."""

    name: str
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise CheckpointError("tensor name must be non-empty")
        arr = np.asarray(self.data)
        if arr.dtype not in NUMPY_TO_DTYPE:
            raise CheckpointError(
                f"tensor '{self.name}' has unsupported dtype {arr.dtype}; "
                "only float32 and float64 are supported"
            )
        object.__setattr__(self, "data", arr)

    @property
    def dtype(self) -> str:
        return NUMPY_TO_DTYPE[self.data.dtype]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def element_count(self) -> int:
        return int(self.data.size)


@dataclass
class Checkpoint:
    """An ordered collection of named tensors plus string metadata."""

    tensors: list[TensorRecord] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, arrays, metadata=None) -> "Checkpoint":
        """Build a checkpoint from an ordered mapping of name -> array."""
        records = [TensorRecord(name, np.asarray(a)) for name, a in arrays.items()]
        return cls(records, dict(metadata or {}))

    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def get(self, name: str) -> TensorRecord:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def arrays(self) -> dict[str, np.ndarray]:
        return {t.name: t.data for t in self.tensors}

    @property
    def total_parameters(self) -> int:
        return sum(t.element_count for t in self.tensors)

    def validate(self) -> None:
        seen = set()
        for t in self.tensors:
            if t.name in seen:
                raise CheckpointError(f"duplicate tensor name '{t.name}'")
            seen.add(t.name)
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise CheckpointError("metadata keys and values must be strings")
        if META_LAYER_ORDER in self.metadata:
            prefixes = parse_layer_order(self.metadata[META_LAYER_ORDER])
            match_layer_order(self.names(), prefixes)

    def layer_order(self) -> list[str] | None:
        raw = self.metadata.get(META_LAYER_ORDER)
        return None if raw is None else parse_layer_order(raw)

    def performance(self) -> float | None:
        raw = self.metadata.get(META_PERFORMANCE)
        if raw is None:
            return None
        try:
            return float(raw)
        except ValueError as exc:
            raise CheckpointError(f"metadata performance '{raw}' is not numeric") from exc


def parse_layer_order(raw: str) -> list[str]:
    try:
        prefixes = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"layer_order metadata is not a JSON list: {exc}") from exc
    if not isinstance(prefixes, list) or not all(isinstance(p, str) for p in prefixes):
        raise CheckpointError("layer_order metadata must be a JSON list of strings")
    return prefixes


def match_layer_order(names, prefixes) -> dict[str, str]:
    """Assign every tensor name to exactly one listed prefix.

    A name matches a prefix when it equals the prefix or extends it past a
    dot. Unmatched or ambiguous names and unused prefixes are all reported.
    """
    assignment: dict[str, str] = {}
    unmatched, ambiguous = [], []
    used = set()
    for name in names:
        hits = [p for p in prefixes if name == p or name.startswith(p + ".")]
        if len(hits) == 1:
            assignment[name] = hits[0]
            used.add(hits[0])
        elif not hits:
            unmatched.append(name)
        else:
            ambiguous.append(name)
    unused = [p for p in prefixes if p not in used]
    if unmatched or ambiguous or unused:
        parts = []
        if unmatched:
            parts.append(f"tensors matching no prefix: {unmatched}")
        if ambiguous:
            parts.append(f"tensors matching several prefixes: {ambiguous}")
        if unused:
            parts.append(f"prefixes matching no tensor: {unused}")
        raise CheckpointError("layer_order inconsistent with tensor names; " + "; ".join(parts))
    return assignment


def _encode(ckpt: Checkpoint) -> bytes:
    header_tensors = {}
    buffers = []
    offset = 0
    for t in ckpt.tensors:
        raw = np.ascontiguousarray(t.data, dtype=DTYPE_TO_NUMPY[t.dtype]).tobytes()
        header_tensors[t.name] = {
            "dtype": t.dtype,
            "shape": list(t.shape),
            "offsets": [offset, offset + len(raw)],
        }
        buffers.append(raw)
        offset += len(raw)
    header = {
        "tensors": header_tensors,
        "metadata": {k: ckpt.metadata[k] for k in sorted(ckpt.metadata)},
    }
    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(buffers)


def save(ckpt: Checkpoint, path) -> None:
    """Serialize a checkpoint. A failed save leaves no file behind."""
    ckpt.validate()
    blob = _encode(ckpt)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _reject_duplicate_keys(pairs):
    obj = {}
    for k, v in pairs:
        if k in obj:
            raise CheckpointFormatError(f"duplicate key '{k}' in header")
        obj[k] = v
    return obj


def _read_header(path):
    """Parse and validate the header. Returns (entries, metadata, header_len).

    entries is an ordered list of (name, dtype, shape, start, end). No bytes
    of the data section are touched.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        prefix = fh.read(8)
        if len(prefix) < 8:
            raise CheckpointFormatError(f"{path}: malformed header (file too short)")
        (header_len,) = struct.unpack("<Q", prefix)
        if 8 + header_len > size:
            raise CheckpointFormatError(
                f"{path}: header length {header_len} exceeds file size {size}"
            )
        raw = fh.read(header_len)
    try:
        header = json.loads(raw.decode("utf-8"), object_pairs_hook=_reject_duplicate_keys)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(header.get("tensors"), dict):
        raise CheckpointFormatError(f"{path}: malformed header: missing 'tensors' object")
    metadata = header.get("metadata", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise CheckpointFormatError(f"{path}: malformed header: metadata must map strings to strings")

    data_size = size - 8 - header_len
    entries = []
    for name, info in header["tensors"].items():
        if not name or not isinstance(info, dict):
            raise CheckpointFormatError(f"{path}: malformed tensor entry '{name}'")
        dtype = info.get("dtype")
        if dtype not in DTYPE_TO_NUMPY:
            raise CheckpointFormatError(f"{path}: tensor '{name}' has unknown dtype {dtype!r}")
        shape = info.get("shape")
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise CheckpointFormatError(f"{path}: tensor '{name}' has invalid shape {shape!r}")
        offs = info.get("offsets")
        if not (isinstance(offs, list) and len(offs) == 2 and all(isinstance(o, int) for o in offs)):
            raise CheckpointFormatError(f"{path}: tensor '{name}' has invalid offsets {offs!r}")
        start, end = offs
        if not (0 <= start <= end <= data_size):
            raise CheckpointFormatError(
                f"{path}: tensor '{name}' offsets [{start}, {end}) out of bounds "
                f"for data section of {data_size} bytes"
            )
        expected = math.prod(shape) * DTYPE_TO_NUMPY[dtype].itemsize
        if end - start != expected:
            raise CheckpointFormatError(
                f"{path}: tensor '{name}' byte range {end - start} does not match "
                f"shape {shape} ({expected} bytes expected)"
            )
        entries.append((name, dtype, shape, start, end))

    by_start = sorted((e for e in entries if e[4] > e[3]), key=lambda e: e[3])
    for (name_a, _, _, _, ea), (name_b, _, _, sb, _) in zip(by_start, by_start[1:]):
        if sb < ea:
            raise CheckpointFormatError(
                f"{path}: tensors '{name_a}' and '{name_b}' have overlapping offset ranges"
            )
    return entries, metadata, header_len


def load(path) -> Checkpoint:
    """Load a checkpoint; tensor order equals header order."""
    entries, metadata, header_len = _read_header(path)
    with open(path, "rb") as fh:
        fh.seek(8 + header_len)
        data = fh.read()
    tensors = []
    for name, dtype, shape, start, end in entries:
        arr = np.frombuffer(data[start:end], dtype=DTYPE_TO_NUMPY[dtype]).reshape(shape)
        tensors.append(TensorRecord(name, arr))
    return Checkpoint(tensors, dict(metadata))


@dataclass(frozen=True)
class CheckpointSummary:
    tensors: list[tuple[str, str, tuple[int, ...]]]  # (name, dtype, shape)
    total_parameters: int
    metadata: dict[str, str]

    def render(self) -> str:
        lines = []
        for name, dtype, shape in self.tensors:
            lines.append(f"{name}  {dtype}  {list(shape)}")
        lines.append(f"total_parameters: {self.total_parameters}")
        for k in sorted(self.metadata):
            lines.append(f"metadata.{k}: {self.metadata[k]}")
        return "\n".join(lines)


def inspect(path) -> CheckpointSummary:
    """Summarize a checkpoint file without decoding any tensor data."""
    entries, metadata, _ = _read_header(path)
    tensors = [(name, dtype, tuple(shape)) for name, dtype, shape, _, _ in entries]
    total = sum(math.prod(shape) for _, _, shape in tensors)
    return CheckpointSummary(tensors, total, dict(metadata))
