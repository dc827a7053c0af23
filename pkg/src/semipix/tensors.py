"""Dense array carriers and the binary tensor container used for all file I/O.

Container layout, all little-endian:

    bytes 0-3   magic ``U2TN`` (0x55 0x32 0x54 0x4E)
    byte  4     format version, currently 1
    byte  5     dtype code: 0=f32, 1=f64, 2=i32, 3=u8
    byte  6     number of dimensions (at most 8)
    byte  7     reserved, must be 0
    then        ndim x u64 extents
    then        row-major payload, no padding, no checksum

Round-trips are bit-exact for every supported dtype.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IGNORE = -1

MAGIC = b"U2TN"
FORMAT_VERSION = 1
MAX_NDIM = 8

# dtype code <-> little-endian numpy dtype
_CODE_TO_DTYPE = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("u1"),
}
_DTYPE_TO_CODE = {dt: code for code, dt in _CODE_TO_DTYPE.items()}


class FormatError(ValueError):
    """A file does not conform to the tensor container format."""


class ValidationError(ValueError):
    """Array contents violate a domain invariant."""


def _dtype_code(dtype: np.dtype) -> int:
    try:
        return _DTYPE_TO_CODE[np.dtype(dtype).newbyteorder("<")]
    except KeyError:
        raise FormatError(f"unsupported dtype {dtype!r}; expected f32, f64, i32, or u8")


def tensor_write(array: np.ndarray, path) -> None:
    """Write `array` to `path` in the container format."""
    code = _dtype_code(array.dtype)
    if array.ndim > MAX_NDIM:
        raise FormatError(f"rank {array.ndim} exceeds the maximum of {MAX_NDIM}")
    header = MAGIC + struct.pack("<BBBB", FORMAT_VERSION, code, array.ndim, 0)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array).astype(_CODE_TO_DTYPE[code], copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(extents)
        fh.write(payload)


def tensor_read(path) -> np.ndarray:
    """Read a container file back into an array. Inverse of tensor_write."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError("file shorter than the 8-byte header")
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    version, code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"unknown dtype code {code}")
    if ndim > MAX_NDIM:
        raise FormatError(f"rank {ndim} exceeds the maximum of {MAX_NDIM}")
    if reserved != 0:
        raise FormatError(f"reserved header byte is {reserved}, expected 0")
    offset = 8 + 8 * ndim
    if len(raw) < offset:
        raise FormatError("file truncated inside the extents block")
    shape = struct.unpack(f"<{ndim}Q", raw[8:offset])
    dtype = _CODE_TO_DTYPE[code]
    count = 1
    for extent in shape:
        count *= extent
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"payload is {len(raw) - offset} bytes, expected {expected - offset}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(shape).copy()


@dataclass(frozen=True)
class ProbBatch:
    """Per-pixel probability distributions, shape [B, H, W, C] with C >= 2."""

    probs: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 4:
            raise ValidationError(f"probability batch must have rank 4, got {self.probs.ndim}")
        if self.probs.shape[-1] < 2:
            raise ValidationError("probability batch needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[-1]

    @property
    def shape(self):
        return self.probs.shape


def validate_prob_batch(array: np.ndarray, tol: float = 1e-5) -> ProbBatch:
    """Check simplex constraints and wrap `array` as a ProbBatch.

    Every entry must be non-negative and every pixel's distribution must sum
    to 1 within `tol`. The error message points at the first offending pixel
    in row-major order.
    """
    batch = ProbBatch(np.asarray(array))
    p = batch.probs
    neg = p < 0.0
    if neg.any():
        b, h, w, c = np.unravel_index(int(neg.argmax()), p.shape)
        raise ValidationError(
            f"negative probability {p[b, h, w, c]!r} at pixel ({b}, {h}, {w}) class {c}"
        )
    sums = p.sum(axis=-1, dtype=np.float64)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        b, h, w = np.unravel_index(int(bad.argmax()), sums.shape)
        raise ValidationError(
            f"pixel ({b}, {h}, {w}) sums to {sums[b, h, w]!r}, outside 1 +/- {tol}"
        )
    return batch


@dataclass(frozen=True)
class LabelMap:
    """Integer class labels, shape [B, H, W]; IGNORE marks excluded pixels."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.labels.ndim != 3:
            raise ValidationError(f"label map must have rank 3, got {self.labels.ndim}")
        if self.labels.dtype != np.int32:
            object.__setattr__(self, "labels", self.labels.astype(np.int32))
        lo = int(self.labels.min(initial=IGNORE))
        hi = int(self.labels.max(initial=IGNORE))
        if lo < IGNORE or hi >= self.num_classes:
            raise ValidationError(
                f"labels must lie in [{IGNORE}, {self.num_classes}), found range [{lo}, {hi}]"
            )

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class ReprBatch:
    """Per-pixel representation vectors, shape [B, H, W, D] with D >= 2."""

    reprs: np.ndarray

    def __post_init__(self):
        if self.reprs.ndim != 4:
            raise ValidationError(f"representation batch must have rank 4, got {self.reprs.ndim}")
        if self.reprs.shape[-1] < 2:
            raise ValidationError("representation vectors need at least 2 dimensions")
        if not np.isfinite(self.reprs).all():
            raise ValidationError("representation batch contains non-finite values")

    @property
    def dim(self) -> int:
        return self.reprs.shape[-1]
