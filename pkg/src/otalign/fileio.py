"""Bit-exact matrix file format (FMAT) and model checkpoints.

FMAT layout, all little-endian:

    bytes 0-3    magic "FMAT"
    bytes 4-7    format version (1), unsigned 32-bit
    bytes 8-11   rows, unsigned 32-bit
    bytes 12-15  cols, unsigned 32-bit
    bytes 16-    rows*cols IEEE-754 float64 values, row-major

A checkpoint is a directory holding a human-readable manifest.json (tensor
names, shapes, step count, config hash, and the resolved experiment
config) plus one FMAT file per tensor; round-trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, ShapeError

__all__ = [
    "write_fmat",
    "read_fmat",
    "save_checkpoint",
    "load_checkpoint_tensors",
]

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")

CHECKPOINT_MANIFEST = "manifest.json"


def write_fmat(path, m: np.ndarray) -> None:
    """Write a 2-D float64 matrix; the payload bytes are exact."""
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"FMAT stores 2-D matrices, got ndim={m.ndim}")
    rows, cols = m.shape
    if rows > 0xFFFFFFFF or cols > 0xFFFFFFFF:
        raise ShapeError(f"matrix {m.shape} exceeds the u32 dimension range")
    header = _HEADER.pack(FMAT_MAGIC, FMAT_VERSION, rows, cols)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.astype("<f8", copy=False).tobytes(order="C"))


def read_fmat(path) -> np.ndarray:
    """Read a matrix back; raises FormatError with the offending byte offset."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes) at byte offset 0")
    magic, version, rows, cols = _HEADER.unpack_from(raw, 0)
    if magic != FMAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != FMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    expected = rows * cols * 8
    payload = len(raw) - _HEADER.size
    if payload != expected:
        raise FormatError(
            f"{path}: payload of {payload} bytes does not match {rows}x{cols} "
            f"float64 values at byte offset {_HEADER.size}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).copy()
    return data.reshape(rows, cols)


def _tensor_filename(name: str) -> str:
    return name.replace("/", "_") + ".fmat"


def save_checkpoint(
    directory,
    tensors: dict[str, np.ndarray],
    step_count: int,
    config_hash: str,
    config: Optional[dict] = None,
) -> None:
    """Write manifest + one FMAT per tensor; 1-D tensors stored as 1 x n."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, tensor in tensors.items():
        fname = _tensor_filename(name)
        as2d = tensor.reshape(1, -1) if tensor.ndim == 1 else tensor
        write_fmat(directory / fname, as2d)
        entries[name] = {"shape": list(tensor.shape), "file": fname}
    manifest = {
        "format": "otalign-checkpoint",
        "version": 1,
        "step_count": step_count,
        "config_hash": config_hash,
        "config": config,
        "tensors": entries,
    }
    (directory / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint_tensors(
    directory, expected_config_hash: Optional[str] = None
) -> tuple[dict[str, np.ndarray], int, str, Optional[dict]]:
    """Load all tensors with shape validation against the manifest.

    A config-hash mismatch is surfaced as a warning, not an error; a
    manifest/tensor shape mismatch names the offending tensor.
    """
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise FormatError(f"no {CHECKPOINT_MANIFEST} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "otalign-checkpoint":
        raise FormatError(f"{manifest_path} is not a checkpoint manifest")
    config_hash = manifest.get("config_hash", "")
    if expected_config_hash is not None and expected_config_hash != config_hash:
        warnings.warn(
            f"checkpoint config hash {config_hash[:12]}... does not match "
            f"expected {expected_config_hash[:12]}...; loading anyway",
            stacklevel=2,
        )
    tensors = {}
    for name, entry in manifest["tensors"].items():
        shape = tuple(entry["shape"])
        stored = read_fmat(directory / entry["file"])
        flat_expected = int(np.prod(shape)) if shape else 0
        if stored.size != flat_expected or (
            len(shape) == 2 and stored.shape != shape
        ):
            raise FormatError(
                f"tensor {name!r}: stored shape {stored.shape} does not match "
                f"manifest shape {shape}"
            )
        tensors[name] = stored.reshape(shape)
    return tensors, int(manifest["step_count"]), config_hash, manifest.get("config")
