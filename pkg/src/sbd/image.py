"""Image container and bit-exact file interchange.

The on-disk format (extension ``.f32img``) is little-endian throughout:

=========  ====  =====================================
offset     size  field
=========  ====  =====================================
0          8     magic ``46 33 32 49 4D 47 00 01`` ("F32IMG\\0\\1")
8          4     width, uint32
12         4     height, uint32
16         8     pixel size in picometers, float64 (0 = unknown)
24         4*w*h payload, float32, row-major
=========  ====  =====================================

Pixels are stored as float32; in memory everything is float64, so values are
quantized once on write and promoted back on read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, TruncationError, ValidationError

MAGIC = b"F32IMG\x00\x01"
_HEADER = struct.Struct("<8sIId")


@dataclass(frozen=True)
class Image:
    """A single-channel image: float64 row-major grid plus pixel-size metadata.

    ``pixel_size`` is in picometers per pixel; 0 means unknown. Instances are
    immutable: the wrapped array is marked read-only at construction.
    """

    data: np.ndarray
    pixel_size: float = 0.0

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError(f"image data must be non-empty 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image data contains non-finite values")
        ps = float(self.pixel_size)
        if not np.isfinite(ps) or ps < 0:
            raise ValidationError(f"pixel_size must be finite and >= 0, got {self.pixel_size!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "pixel_size", ps)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def write_image(img, path, pixel_size=None):
    """Write ``img`` (Image or 2-D array) to ``path`` in the F32IMG layout."""
    if not isinstance(img, Image):
        img = Image(np.asarray(img), 0.0 if pixel_size is None else pixel_size)
    elif pixel_size is not None:
        img = Image(img.data, pixel_size)
    payload = img.data.astype("<f4").tobytes(order="C")
    header = _HEADER.pack(MAGIC, img.width, img.height, img.pixel_size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_image(path) -> Image:
    """Read an F32IMG file, promoting the payload to float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, width, height, pixel_size = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if width == 0 or height == 0:
        raise FormatError(f"{path}: zero dimension {width}x{height}")
    expected = 4 * width * height
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    if not np.isfinite(pixel_size) or pixel_size < 0:
        raise ValidationError(f"{path}: bad pixel size {pixel_size!r}")
    return Image(data, pixel_size)


def export_view(img, lo, hi, path):
    """Export a windowed 16-bit view of ``img`` as a binary PGM (P5, maxval 65535).

    Intensities are mapped by ``round(65535 * clamp((v - lo) / (hi - lo), 0, 1))``
    with halves rounding up; PGM 16-bit samples are big-endian per the format.
    """
    if not np.isfinite(lo) or not np.isfinite(hi) or not lo < hi:
        raise ParameterError(f"need finite lo < hi, got lo={lo!r} hi={hi!r}")
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    scaled = np.clip((data - lo) / (hi - lo), 0.0, 1.0)
    levels = np.floor(65535.0 * scaled + 0.5).astype(np.uint16)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(levels.astype(">u2").tobytes(order="C"))
