"""SCF1: the little-endian plane container used for every intermediate artifact.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"SCF1"
    4       1     version (1)
    5       1     plane type tag (see PlaneType)
    6       2     plane count (uint16)
    8       4     width (uint32)
    12      4     height (uint32)
    16      1     quality factor (0 = unknown)
    17      7     reserved, zero
    24      128   quantization table, 64 x uint16 zig-zag (COEFFICIENTS only)
    ...           planes, each height x width, row-major

Element types: COEFFICIENTS and CHANGES are int16, COSTS and GRADIENTS are
float64, MASKS are uint8 (0/1).
"""
from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .jpegio import ZIGZAG, CoefficientImage

MAGIC = b"SCF1"
VERSION = 1
_HEADER = struct.Struct("<4sBBHIIB7x")


class PlaneType(enum.IntEnum):
    COEFFICIENTS = 1
    COSTS = 2
    GRADIENTS = 3
    MASKS = 4
    CHANGES = 5


_DTYPES = {
    PlaneType.COEFFICIENTS: np.dtype("<i2"),
    PlaneType.COSTS: np.dtype("<f8"),
    PlaneType.GRADIENTS: np.dtype("<f8"),
    PlaneType.MASKS: np.dtype("u1"),
    PlaneType.CHANGES: np.dtype("<i2"),
}


class ContainerError(ValueError):
    pass


@dataclass
class Container:
    kind: PlaneType
    planes: list[np.ndarray]
    quant_table: np.ndarray | None = None
    quality_factor: int | None = None

    @property
    def height(self) -> int:
        return self.planes[0].shape[0]

    @property
    def width(self) -> int:
        return self.planes[0].shape[1]


def write_container(kind: PlaneType, planes, quant_table=None, quality_factor=None) -> bytes:
    kind = PlaneType(kind)
    planes = [np.asarray(p) for p in planes]
    if not planes:
        raise ContainerError("at least one plane is required")
    shape = planes[0].shape
    if any(p.shape != shape or p.ndim != 2 for p in planes):
        raise ContainerError("all planes must be 2-D with identical shapes")
    dtype = _DTYPES[kind]
    out = bytearray(_HEADER.pack(MAGIC, VERSION, int(kind), len(planes),
                                 shape[1], shape[0], quality_factor or 0))
    if kind == PlaneType.COEFFICIENTS:
        if quant_table is None:
            raise ContainerError("coefficient containers need a quantization table")
        qt = np.asarray(quant_table).reshape(-1)[ZIGZAG]
        out += qt.astype("<u2").tobytes()
    for p in planes:
        if dtype.kind == "i":
            info = np.iinfo(dtype)
            if p.min() < info.min or p.max() > info.max:
                raise ContainerError(f"plane values exceed {dtype} range")
        out += np.ascontiguousarray(p, dtype=dtype).tobytes()
    return bytes(out)


def read_container(data: bytes) -> Container:
    if len(data) < _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, tag, count, width, height, qf = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    try:
        kind = PlaneType(tag)
    except ValueError:
        raise ContainerError(f"unknown plane type tag {tag}") from None
    pos = _HEADER.size
    qt = None
    if kind == PlaneType.COEFFICIENTS:
        raw = np.frombuffer(data, dtype="<u2", count=64, offset=pos) if len(data) >= pos + 128 else None
        if raw is None:
            raise ContainerError("size mismatch: truncated quantization table")
        qt = np.zeros(64, dtype=np.int64)
        qt[ZIGZAG] = raw
        qt = qt.reshape(8, 8)
        pos += 128
    dtype = _DTYPES[kind]
    expected = pos + count * width * height * dtype.itemsize
    if len(data) != expected:
        raise ContainerError(f"size mismatch: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype=dtype, offset=pos).reshape(count, height, width)
    planes = [flat[i].astype(dtype.newbyteorder("=")) for i in range(count)]
    if dtype.kind == "f" and not all(np.isfinite(p).all() for p in planes):
        warnings.warn("container holds non-finite values", RuntimeWarning, stacklevel=2)
    return Container(kind, planes, qt, qf or None)


def header_fields(data: bytes) -> dict:
    c = read_container(data)
    return {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "kind": c.kind.name,
        "planes": len(c.planes),
        "width": c.width,
        "height": c.height,
        "quality_factor": c.quality_factor,
    }


def coefficients_to_bytes(img: CoefficientImage) -> bytes:
    return write_container(PlaneType.COEFFICIENTS, [img.coeffs], img.quant_table,
                           img.quality_factor)


def coefficients_from_bytes(data: bytes) -> CoefficientImage:
    c = read_container(data)
    if c.kind != PlaneType.COEFFICIENTS:
        raise ContainerError(f"expected COEFFICIENTS, found {c.kind.name}")
    return CoefficientImage(c.planes[0].astype(np.int32), c.quant_table, c.quality_factor)
