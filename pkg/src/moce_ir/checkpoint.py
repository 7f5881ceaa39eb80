"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MOCE" | u16 version | u32 manifest length | manifest (UTF-8)
    | payload (float32 tensors in manifest order) | u32 CRC32(payload)

The manifest is plain text: a ``[config]`` block of ``key=value`` lines and
a ``[tensors]`` block of ``name shape byte_offset element_count`` lines, where
``shape`` is comma separated (``-`` for a scalar) and offsets are relative to
the start of the payload.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MOCE"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class CRCError(CheckpointError):
    """Payload checksum does not match."""


@dataclass
class Checkpoint:
    config: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix/`` with the prefix stripped."""
        head = prefix + "/"
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}


def _shape_text(shape: tuple[int, ...]) -> str:
    return ",".join(str(d) for d in shape) if shape else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(d) for d in text.split(","))


def encode(ckpt: Checkpoint) -> bytes:
    lines = ["[config]"]
    for key, value in ckpt.config.items():
        value = str(value)
        if "\n" in value or "=" in key or any(c.isspace() for c in key):
            raise CheckpointError(f"config entry {key!r} cannot be stored")
        lines.append(f"{key}={value}")
    lines.append("[tensors]")
    chunks, offset = [], 0
    for name, arr in ckpt.tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        data = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        lines.append(f"{name} {_shape_text(data.shape)} {offset} {data.size}")
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(chunks)
    return (
        _HEADER.pack(MAGIC, VERSION, len(manifest))
        + manifest
        + payload
        + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)
    )


def decode(raw: bytes) -> Checkpoint:
    if len(raw) < _HEADER.size + _CRC.size:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEADER.size + mlen
    if start + _CRC.size > len(raw):
        raise CheckpointError("manifest length exceeds file size")
    payload = raw[start:-_CRC.size]
    (crc,) = _CRC.unpack_from(raw, len(raw) - _CRC.size)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CRCError("payload CRC32 mismatch; checkpoint is corrupt")

    try:
        manifest = raw[_HEADER.size:start].decode("utf-8").splitlines()
    except UnicodeDecodeError as err:
        raise CheckpointError("manifest is not UTF-8") from err
    ckpt = Checkpoint()
    section = None
    expected = 0
    for line in manifest:
        if line in ("[config]", "[tensors]"):
            section = line
        elif section == "[config]":
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad config line {line!r}")
            ckpt.config[key] = value
        elif section == "[tensors]":
            parts = line.split()
            if len(parts) != 4:
                raise CheckpointError(f"bad tensor line {line!r}")
            try:
                name, shape, offset, count = parts[0], _parse_shape(parts[1]), int(parts[2]), int(parts[3])
            except ValueError:
                raise CheckpointError(f"bad tensor line {line!r}") from None
            if int(np.prod(shape)) != count or offset != expected or offset + 4 * count > len(payload):
                raise CheckpointError(f"tensor {name} does not match the payload extents")
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            ckpt.tensors[name] = arr.reshape(shape).astype(np.float64)
            expected = offset + 4 * count
        elif line:
            raise CheckpointError(f"manifest line outside a section: {line!r}")
    if expected != len(payload):
        raise CheckpointError("payload has trailing bytes not listed in the manifest")
    return ckpt


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode(ckpt))


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
