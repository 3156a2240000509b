"""WCT1 binary container, PGM rendering and CSV emitters.

Container layout::

    b"WCT1" | uint64 LE header length | UTF-8 JSON header | float64 LE payload

The header is padded with spaces so the payload starts on an 8-byte
boundary, which lets large payloads be memory-mapped directly.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"WCT1"
KINDS = ("beam", "cone", "radon", "gtable", "image")
_PREFIX = len(MAGIC) + 8
_DTYPE = np.dtype("<f8")


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    kind: str
    values: np.ndarray
    header: dict = field(default_factory=dict)


def _header_bytes(kind: str, shape: tuple[int, ...], meta: dict) -> bytes:
    if kind not in KINDS:
        raise ContainerError(f"unknown container kind {kind!r}")
    head = dict(meta)
    head.update(kind=kind, dims=[int(d) for d in shape], dtype="<f8", order="C")
    raw = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    pad = (-(len(raw) + _PREFIX)) % 8
    return raw + b" " * pad


def write_container(path, kind: str, values: np.ndarray, meta: dict | None = None) -> Path:
    """Write ``values`` with a JSON header; the round-trip is bit-exact."""
    path = Path(path)
    values = np.ascontiguousarray(values, dtype=_DTYPE)
    raw = _header_bytes(kind, values.shape, meta or {})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(values.tobytes(order="C"))
    return path


def create_container(path, kind: str, shape: tuple[int, ...], meta: dict | None = None) -> np.memmap:
    """Allocate a container on disk and return a writable memory map of its payload."""
    path = Path(path)
    raw = _header_bytes(kind, shape, meta or {})
    offset = _PREFIX + len(raw)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.truncate(offset + int(np.prod(shape)) * 8)
    return np.memmap(path, dtype=_DTYPE, mode="r+", offset=offset, shape=tuple(shape))


def read_header(path) -> tuple[dict, int]:
    """(header, payload offset); validates magic and payload size."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContainerError(f"{path}: bad magic, not a WCT1 container")
        packed = fh.read(8)
        if len(packed) != 8:
            raise ContainerError(f"{path}: truncated header")
        (hlen,) = struct.unpack("<Q", packed)
        if _PREFIX + hlen > size:
            raise ContainerError(f"{path}: header length exceeds file size")
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"{path}: corrupt header") from exc
    dims = header.get("dims")
    if not isinstance(dims, list) or any(not isinstance(d, int) or d < 0 for d in dims):
        raise ContainerError(f"{path}: header has no valid dims")
    offset = _PREFIX + hlen
    if size - offset != int(np.prod(dims)) * 8:
        raise ContainerError(f"{path}: payload size does not match dims {dims}")
    return header, offset


def read_container(path, mmap: bool = False) -> Container:
    header, offset = read_header(path)
    shape = tuple(header["dims"])
    if mmap:
        values = np.memmap(path, dtype=_DTYPE, mode="r", offset=offset, shape=shape)
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            values = np.frombuffer(fh.read(), dtype=_DTYPE).reshape(shape).copy()
    return Container(header["kind"], values, header)


# ---------------------------------------------------------------- renderings


def write_pgm(path, image: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM with [min, max] mapped linearly to [0, 255]; returns the window.

    Row 0 of the file is the top of the picture, i.e. the largest value of
    the image's second axis.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ContainerError("PGM output needs a 2D array")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    pix = np.rint((img - lo) / span * 255.0).clip(0, 255).astype(np.uint8)
    pix = pix.T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    log.info("%s: grey window [%.6g, %.6g]", path, lo, hi)
    return lo, hi


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ContainerError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def write_profile_csv(path, coords, reference, recon) -> Path:
    return write_csv(path, ["s", "reference", "reconstruction"], zip(coords, reference, recon))
