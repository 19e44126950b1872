"""In-memory rasters and the VCR container format.

A :class:`RasterImage` is an immutable stack of ``bands`` single-channel
planes of size ``height x width``. Samples are stored as 64-bit floats in
band-sequential order (one complete band after another, row-major within
each band). An optional validity mask marks pixels to exclude from fidelity
terms and metrics; an optional per-band wavelength vector carries spectral
coordinates in nanometres.

VCR container layout (all integers little-endian)::

    offset 0   4 bytes   magic "VCR1"
    offset 4   4 bytes   u32 header length H
    offset 8   H bytes   UTF-8 JSON header
    offset 8+H           payload: width*height*bands float32 samples,
                         band-sequential, row-major within each band
    tail                 if header["mask"]: width*height bytes,
                         0 = invalid, 1 = valid

The JSON header carries ``{"width", "height", "bands", "dtype": "f32",
"layout": "bsq", "mask": bool}`` plus an optional ``"wavelengths"`` array.
Samples are quantized to 32-bit floats on write, so a raster that is already
32-bit quantized round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GeometryError, UnsupportedFormatError

__all__ = [
    "RasterImage",
    "BandMatrix",
    "create_raster",
    "read_raster",
    "write_raster",
    "import_pgm",
]

_MAGIC = b"VCR1"


@dataclass(frozen=True)
class RasterImage:
    """Immutable multi-band image.

    ``data`` has shape ``(bands, height, width)`` and dtype float64; the
    array is copied on construction and marked read-only. ``mask`` (optional)
    has shape ``(height, width)`` with True marking valid pixels.
    """

    data: np.ndarray
    mask: np.ndarray | None = None
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise GeometryError(f"raster data must be 2-D or 3-D, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise GeometryError(f"raster dimensions must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("raster samples must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool).copy()
            if m.shape != arr.shape[1:]:
                raise GeometryError(
                    f"mask shape {m.shape} does not match raster plane {arr.shape[1:]}"
                )
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

        if self.wavelengths is not None:
            w = np.asarray(self.wavelengths, dtype=np.float64).copy()
            if w.shape != (arr.shape[0],):
                raise GeometryError(
                    f"wavelength count {w.shape} does not match band count {arr.shape[0]}"
                )
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise GeometryError("wavelengths must be finite and positive")
            w.setflags(write=False)
            object.__setattr__(self, "wavelengths", w)

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray) -> "RasterImage":
        """New raster with the same mask/wavelengths but different samples."""
        return RasterImage(data, mask=self.mask, wavelengths=self.wavelengths)

    def band(self, index: int) -> np.ndarray:
        return self.data[index]


@dataclass(frozen=True)
class BandMatrix:
    """Dense spectral mixing matrix (rows x cols), e.g. a spectral response."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or min(m.shape) < 1:
            raise GeometryError(f"band matrix must be 2-D and non-empty, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("band matrix entries must be finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


def create_raster(
    width: int,
    height: int,
    bands: int,
    fill: float = 0.0,
    wavelengths=None,
) -> RasterImage:
    """Constant raster of the given geometry."""
    if width < 1 or height < 1 or bands < 1:
        raise GeometryError(f"invalid geometry {width}x{height}x{bands}")
    if not np.isfinite(fill):
        raise GeometryError(f"fill value must be finite, got {fill!r}")
    return RasterImage(np.full((bands, height, width), float(fill)), wavelengths=wavelengths)


def write_raster(path, img: RasterImage) -> None:
    """Serialize ``img`` to a VCR container, quantizing samples to float32."""
    header = {
        "width": img.width,
        "height": img.height,
        "bands": img.bands,
        "dtype": "f32",
        "layout": "bsq",
        "mask": img.mask is not None,
    }
    if img.wavelengths is not None:
        header["wavelengths"] = [float(w) for w in img.wavelengths]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(img.data.astype("<f4").tobytes())
        if img.mask is not None:
            fh.write(img.mask.astype(np.uint8).tobytes())


def read_raster(path) -> RasterImage:
    """Parse a VCR container.

    Raises
    ------
    FormatError
        On bad magic, truncation, undecodable header, or a payload whose
        size disagrees with the header geometry. The error carries the byte
        offset of the failure and, for size mismatches, the expected and
        actual byte counts.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(
            f"container truncated: need at least 8 bytes, got {len(blob)}",
            offset=0, expected=8, actual=len(blob),
        )
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} at offset 0, expected {_MAGIC!r}", offset=0)
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise FormatError(
            f"header truncated: declared {hlen} bytes at offset 8, file holds {len(blob) - 8}",
            offset=8, expected=hlen, actual=len(blob) - 8,
        )
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=8) from exc

    for key in ("width", "height", "bands", "dtype", "layout", "mask"):
        if key not in header:
            raise FormatError(f"header missing required key {key!r}", offset=8)
    if header["dtype"] != "f32":
        raise UnsupportedFormatError(f"unsupported dtype {header['dtype']!r}, only 'f32' is defined")
    if header["layout"] != "bsq":
        raise UnsupportedFormatError(f"unsupported layout {header['layout']!r}, only 'bsq' is defined")
    w, h, b = header["width"], header["height"], header["bands"]
    if not all(isinstance(v, int) and v >= 1 for v in (w, h, b)):
        raise FormatError(f"header geometry must be positive integers, got {w}x{h}x{b}", offset=8)

    payload_at = 8 + hlen
    nsamples = w * h * b
    expected = nsamples * 4 + (w * h if header["mask"] else 0)
    actual = len(blob) - payload_at
    if actual != expected:
        raise FormatError(
            f"payload size mismatch at offset {payload_at}: header {w}x{h}x{b}"
            f" (mask={header['mask']}) needs {expected} bytes, found {actual}",
            offset=payload_at, expected=expected, actual=actual,
        )
    samples = np.frombuffer(blob, dtype="<f4", count=nsamples, offset=payload_at)
    data = samples.astype(np.float64).reshape(b, h, w)
    mask = None
    if header["mask"]:
        mbytes = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=payload_at + nsamples * 4)
        mask = mbytes.reshape(h, w) != 0
    wavelengths = header.get("wavelengths")
    return RasterImage(data, mask=mask, wavelengths=wavelengths)


def _pgm_tokens(blob: bytes):
    """Yield (token, offset) over a PGM header, skipping whitespace and # comments."""
    i = 0
    n = len(blob)
    while i < n:
        c = blob[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and blob[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            start = i
            while i < n and not blob[i:i + 1].isspace():
                i += 1
            yield blob[start:i], start
            i += 1  # consume the single whitespace after the token


def import_pgm(path) -> RasterImage:
    """Import a binary (P5) PGM file as a single-band raster scaled to [0, 1].

    Only maxval 255 (one byte per sample) and 65535 (two big-endian bytes)
    are accepted; ASCII (P2) files are rejected.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = _pgm_tokens(blob)
    try:
        magic, _ = next(tokens)
    except StopIteration:
        raise FormatError("empty PGM file", offset=0) from None
    if magic == b"P2":
        raise UnsupportedFormatError("ASCII PGM (P2) is not supported, use binary P5")
    if magic != b"P5":
        raise UnsupportedFormatError(f"not a PGM file: magic {magic!r}")
    try:
        (wtok, _), (htok, _), (mtok, moff) = next(tokens), next(tokens), next(tokens)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (StopIteration, ValueError):
        raise FormatError("PGM header ended before width/height/maxval", offset=len(blob)) from None
    if maxval == 255:
        dtype, stride = np.uint8, 1
    elif maxval == 65535:
        dtype, stride = ">u2", 2
    else:
        raise UnsupportedFormatError(f"PGM maxval must be 255 or 65535, got {maxval}")
    data_at = moff + len(mtok) + 1
    expected = width * height * stride
    actual = len(blob) - data_at
    if actual < expected:
        raise FormatError(
            f"PGM pixel data truncated: need {expected} bytes, found {actual}",
            offset=data_at, expected=expected, actual=actual,
        )
    raw = np.frombuffer(blob, dtype=dtype, count=width * height, offset=data_at)
    return RasterImage(raw.astype(np.float64).reshape(1, height, width) / maxval)
