"""File formats: ``.ten`` tensors, ``.ktdm`` models, binary PGM/PPM images
and newline-delimited run records.

``.ten`` layout (all little-endian)::

    b"KTDT" | version: u8 = 1 | order N: u32 | N extents: u64 | float64 data

with the data in canonical order (last index fastest).

A ``.ktdm`` file is a JSON manifest; every factor block is embedded as a
base64-encoded ``.ten`` payload.
"""
from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .ktd import KtdModel
from .tensor import DimsGrid

__all__ = [
    "TEN_MAGIC",
    "TEN_VERSION",
    "ten_to_bytes",
    "ten_from_bytes",
    "write_ten",
    "read_ten",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
    "pnm_to_bytes",
    "pnm_from_bytes",
    "read_image",
    "write_image",
    "read_tensor",
    "write_tensor",
    "RunRecord",
    "RECORD_SCHEMA",
    "parse_records",
    "sha256_file",
]

TEN_MAGIC = b"KTDT"
TEN_VERSION = 1
KTDM_VERSION = 1
RECORD_SCHEMA = 1
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


# --- .ten -------------------------------------------------------------------

def ten_to_bytes(t) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    head = TEN_MAGIC + struct.pack("<BI", TEN_VERSION, t.ndim)
    head += struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + np.ascontiguousarray(t).astype("<f8", copy=False).tobytes()


def ten_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 9:
        raise FormatError("truncated .ten header", len(buf))
    if buf[:4] != TEN_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {TEN_MAGIC!r}", 0)
    version, order = struct.unpack_from("<BI", buf, 4)
    if version != TEN_VERSION:
        raise FormatError(f"unsupported .ten version {version}", 4)
    if order < 1:
        raise FormatError("tensor order must be >= 1", 5)
    end = 9 + 8 * order
    if len(buf) < end:
        raise FormatError("truncated extent list", len(buf))
    dims = struct.unpack_from(f"<{order}Q", buf, 9)
    if any(d < 1 for d in dims):
        raise FormatError(f"non-positive extent in {dims}", 9)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - end != 8 * count:
        raise FormatError(
            f"payload has {len(buf) - end} bytes, expected {8 * count}", min(len(buf), end + 8 * count)
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=end)
    return data.astype(np.float64).reshape(dims)


def write_ten(path, t) -> None:
    Path(path).write_bytes(ten_to_bytes(t))


def read_ten(path) -> np.ndarray:
    return ten_from_bytes(Path(path).read_bytes())


# --- .ktdm ------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.random.SeedSequence):
        return obj.entropy
    return obj


def model_to_bytes(model: KtdModel) -> bytes:
    doc = {
        "format": "ktdm",
        "version": KTDM_VERSION,
        "grid": [list(row) for row in model.grid.blocks],
        "sigmas": [float(s) for s in model.sigmas],
        "metadata": _jsonable(model.metadata),
        "factors": [
            [base64.b64encode(ten_to_bytes(b)).decode("ascii") for b in blocks]
            for blocks in model.factors
        ],
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def model_from_bytes(buf: bytes) -> KtdModel:
    try:
        doc = json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model manifest is not valid JSON: {exc}",
                          getattr(exc, "pos", None)) from exc
    if not isinstance(doc, dict) or doc.get("format") != "ktdm":
        raise FormatError("not a ktdm manifest", 0)
    if doc.get("version") != KTDM_VERSION:
        raise FormatError(f"unsupported ktdm version {doc.get('version')}")
    try:
        grid = DimsGrid(tuple(tuple(row) for row in doc["grid"]))
        sigmas = np.array(doc["sigmas"], dtype=np.float64).reshape(-1)
        factors = [
            [ten_from_bytes(base64.b64decode(b, validate=True)) for b in blocks]
            for blocks in doc["factors"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed ktdm manifest: {exc}") from exc
    if len(factors) != sigmas.size or any(len(f) != grid.num_blocks for f in factors):
        raise FormatError("factor list does not match the grid and weights")
    for blocks in factors:
        for m, b in enumerate(blocks):
            if b.shape != grid.blocks[m]:
                raise FormatError(f"block {m} has shape {b.shape}, grid says {grid.blocks[m]}")
    return KtdModel(grid, sigmas, factors, doc.get("metadata", {}))


def save_model(path, model: KtdModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> KtdModel:
    return model_from_bytes(Path(path).read_bytes())


# --- PGM / PPM --------------------------------------------------------------

def _header_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens after the magic,
    skipping comments; returns the tokens and the offset just past the single
    whitespace byte that ends the header."""
    pos = 2
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        if pos >= n:
            raise FormatError("truncated header", pos)
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < n and buf[pos:pos + 1].isdigit():
                pos += 1
            tokens.append((int(buf[start:pos]), start))
        else:
            raise FormatError(f"unexpected byte {c!r} in header", pos)
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("header must end with a single whitespace byte", pos)
    return tokens, pos + 1


def pnm_from_bytes(buf: bytes) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) with maxval 255."""
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r}; only P5 and P6 are read", 0)
    tokens, start = _header_tokens(buf, 3)
    (width, w_at), (height, h_at), (maxval, m_at) = tokens
    if width < 1:
        raise FormatError("width must be positive", w_at)
    if height < 1:
        raise FormatError("height must be positive", h_at)
    if maxval != 255:
        raise FormatError(f"maxval {maxval} not supported; only 8-bit images (maxval 255)", m_at)
    size = width * height * channels
    if len(buf) - start < size:
        raise FormatError(f"pixel data truncated: need {size} bytes, found {len(buf) - start}", len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=size, offset=start).astype(np.float64)
    if channels == 1:
        return pixels.reshape(height, width)
    return pixels.reshape(height, width, 3)


def _to_bytes8(t: np.ndarray) -> np.ndarray:
    clipped = np.clip(t, 0.0, 255.0)
    # values are non-negative here, so floor(v + 0.5) rounds half away from zero
    return np.floor(clipped + 0.5).astype(np.uint8)


def pnm_to_bytes(t) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 3 and t.shape[2] == 1:
        t = t[:, :, 0]
    if t.ndim == 2:
        magic = b"P5"
    elif t.ndim == 3 and t.shape[2] == 3:
        magic = b"P6"
    else:
        raise InvalidArgumentError(
            f"images must be H x W or H x W x 3, got shape {t.shape}"
        )
    head = magic + f"\n{t.shape[1]} {t.shape[0]}\n255\n".encode("ascii")
    return head + _to_bytes8(t).tobytes()


def read_image(path) -> np.ndarray:
    return pnm_from_bytes(Path(path).read_bytes())


def write_image(path, t) -> None:
    Path(path).write_bytes(pnm_to_bytes(t))


def is_image_path(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def read_tensor(path) -> np.ndarray:
    """Read a ``.ten`` tensor or a PGM/PPM image, chosen by suffix."""
    return read_image(path) if is_image_path(path) else read_ten(path)


def write_tensor(path, t) -> None:
    if is_image_path(path):
        write_image(path, t)
    else:
        write_ten(path, t)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- run records ------------------------------------------------------------

@dataclass
class RunRecord:
    """One line of machine-readable output from a CLI command."""

    command: str
    config: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    seed: Optional[int] = None
    checksums: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    schema: int = RECORD_SCHEMA

    def __post_init__(self):
        for phase, ms in self.timings_ms.items():
            if ms < 0:
                raise InvalidArgumentError(f"negative timing for phase {phase!r}")

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        doc = json.loads(line)
        if doc.get("schema") != RECORD_SCHEMA:
            raise FormatError(f"unsupported record schema {doc.get('schema')}")
        return cls(**doc)


def parse_records(text: str) -> list:
    return [RunRecord.from_json(line) for line in text.splitlines() if line.strip()]
