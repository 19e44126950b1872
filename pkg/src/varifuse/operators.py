"""Linear degradation operators, affine degradation, and noise synthesis.

Every operator exposes ``apply`` and ``adjoint`` with declared input/output
geometries, and the pair satisfies <A x, y> == <x, A^T y> to roundoff. The
blur uses a truncated, renormalized Gaussian kernel with symmetric
(half-sample reflective) boundary padding; with a symmetric kernel that
extension makes the operator exactly self-adjoint and constant-preserving.
Downsampling is an r x r block mean whose adjoint replicates each coarse
pixel scaled by 1/r^2. Gain is the linear part of a gain/offset radiometric
map; the offset belongs to :func:`apply_affine_degradation`.

Operator outputs carry no validity mask; wavelengths propagate only when
the band count is unchanged.

Noise synthesis is driven by the counter-based Philox 4x64-10 generator
keyed with the 64-bit seed from :class:`NoiseSpec`, so a spec reproduces the
same field on every run. Speckle follows the unit-mean multiplicative model
with integer looks L: the per-pixel factor is the mean of L i.i.d. unit
exponentials, a Gamma(L, L) variable with variance 1/L.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import DomainError, FormatError, GeometryError
from .raster import BandMatrix, RasterImage

__all__ = [
    "Geometry",
    "LinearOperator",
    "Identity",
    "GaussianBlur",
    "BlockMean",
    "MaskOperator",
    "GainOperator",
    "SpectralResponseOperator",
    "CompositeOperator",
    "gaussian_kernel",
    "apply_affine_degradation",
    "NoiseSpec",
    "add_noise",
    "gamma_neglog_likelihood",
    "load_spectral_response",
]


class Geometry(NamedTuple):
    width: int
    height: int
    bands: int


def _geom_of(img: RasterImage) -> Geometry:
    return Geometry(img.width, img.height, img.bands)


class LinearOperator:
    """Base class: geometry-checked forward/adjoint pair."""

    in_geom: Geometry
    out_geom: Geometry

    def apply(self, img: RasterImage) -> RasterImage:
        if _geom_of(img) != self.in_geom:
            raise GeometryError(
                f"{type(self).__name__}.apply expects {self.in_geom}, got {_geom_of(img)}"
            )
        return self._wrap(self._forward(img.data), img)

    def adjoint(self, img: RasterImage) -> RasterImage:
        if _geom_of(img) != self.out_geom:
            raise GeometryError(
                f"{type(self).__name__}.adjoint expects {self.out_geom}, got {_geom_of(img)}"
            )
        return self._wrap(self._backward(img.data), img)

    def _wrap(self, arr: np.ndarray, src: RasterImage) -> RasterImage:
        wl = src.wavelengths if arr.shape[0] == src.bands else None
        return RasterImage(arr, wavelengths=wl)

    def _forward(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _backward(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Identity(LinearOperator):
    def __init__(self, geom: Geometry):
        self.in_geom = self.out_geom = Geometry(*geom)

    def _forward(self, a):
        return a.copy()

    _backward = _forward


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Truncated, renormalized 1-D Gaussian. Default radius is ceil(3 sigma)."""
    if radius is None:
        radius = math.ceil(3.0 * sigma) if sigma > 0 else 0
    if radius < 0:
        raise GeometryError(f"kernel radius must be >= 0, got {radius}")
    if radius == 0:
        return np.ones(1)
    if sigma <= 0:
        raise GeometryError(f"blur sigma must be positive for radius {radius}, got {sigma}")
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (k / sigma) ** 2)
    return k / k.sum()


class GaussianBlur(LinearOperator):
    """Separable Gaussian blur, self-adjoint under symmetric padding."""

    def __init__(self, geom: Geometry, sigma: float, radius: int | None = None):
        self.in_geom = self.out_geom = Geometry(*geom)
        self.sigma = float(sigma)
        self.kernel = gaussian_kernel(sigma, radius)

    def _forward(self, a):
        out = ndimage.correlate1d(a, self.kernel, axis=-1, mode="reflect")
        return ndimage.correlate1d(out, self.kernel, axis=-2, mode="reflect")

    _backward = _forward


class BlockMean(LinearOperator):
    """Downsample by an r x r block mean; both dimensions must divide by r."""

    def __init__(self, geom: Geometry, factor: int):
        w, h, b = Geometry(*geom)
        if factor < 1:
            raise GeometryError(f"downsample factor must be >= 1, got {factor}")
        if w % factor or h % factor:
            raise GeometryError(f"geometry {w}x{h} not divisible by factor {factor}")
        self.factor = int(factor)
        self.in_geom = Geometry(w, h, b)
        self.out_geom = Geometry(w // factor, h // factor, b)

    def _forward(self, a):
        r = self.factor
        b, h, w = a.shape
        return a.reshape(b, h // r, r, w // r, r).mean(axis=(2, 4))

    def _backward(self, a):
        r = self.factor
        return np.repeat(np.repeat(a, r, axis=-2), r, axis=-1) / (r * r)


class MaskOperator(LinearOperator):
    """Zero out invalid pixels (M in the degradation chain). Self-adjoint."""

    def __init__(self, mask: np.ndarray, bands: int):
        m = np.asarray(mask, dtype=bool)
        if m.ndim != 2:
            raise GeometryError(f"mask must be 2-D, got ndim={m.ndim}")
        self.mask = m
        h, w = m.shape
        self.in_geom = self.out_geom = Geometry(w, h, bands)

    def _forward(self, a):
        return np.where(self.mask, a, 0.0)

    _backward = _forward


class GainOperator(LinearOperator):
    """Pointwise multiplicative gain; the diagonal is its own adjoint."""

    def __init__(self, gain: RasterImage):
        self.gain = gain.data
        self.in_geom = self.out_geom = _geom_of(gain)

    def _forward(self, a):
        return a * self.gain

    _backward = _forward


class SpectralResponseOperator(LinearOperator):
    """Band mixing: out_b = sum_s P[b, s] * in_s at every pixel."""

    def __init__(self, response: BandMatrix, width: int, height: int):
        self.response = response
        self.in_geom = Geometry(width, height, response.cols)
        self.out_geom = Geometry(width, height, response.rows)

    def _forward(self, a):
        return np.tensordot(self.response.entries, a, axes=(1, 0))

    def _backward(self, a):
        return np.tensordot(self.response.entries.T, a, axes=(1, 0))


class CompositeOperator(LinearOperator):
    """Ordered chain: stages[0] is applied first. Adjoint runs in reverse."""

    def __init__(self, stages: Sequence[LinearOperator]):
        if not stages:
            raise GeometryError("composite operator needs at least one stage")
        for i in range(1, len(stages)):
            if stages[i].in_geom != stages[i - 1].out_geom:
                raise GeometryError(
                    f"composite stage {i} expects {stages[i].in_geom}, "
                    f"stage {i - 1} produces {stages[i - 1].out_geom}"
                )
        self.stages = list(stages)
        self.in_geom = stages[0].in_geom
        self.out_geom = stages[-1].out_geom

    def _forward(self, a):
        for op in self.stages:
            a = op._forward(a)
        return a

    def _backward(self, a):
        for op in reversed(self.stages):
            a = op._backward(a)
        return a


def apply_affine_degradation(op: LinearOperator, offset: RasterImage, img: RasterImage) -> RasterImage:
    """Affine radiometric map: op(img) + offset (T in the degradation chain)."""
    out = op.apply(img)
    if _geom_of(offset) != _geom_of(out):
        raise GeometryError(
            f"offset geometry {_geom_of(offset)} does not match operator output {_geom_of(out)}"
        )
    return RasterImage(out.data + offset.data, wavelengths=out.wavelengths)


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of one synthetic noise family plus the RNG seed.

    gaussian: additive, std ``sigma``. speckle: multiplicative Gamma with
    integer ``looks``. impulse: each pixel is replaced by ``low`` or ``high``
    with probability ``density/2`` each. stripe: a deterministic additive
    sinusoid of the given period (pixels), amplitude and orientation, where
    the orientation names the direction the stripes run along.
    """

    family: Literal["gaussian", "speckle", "impulse", "stripe"]
    seed: int = 0
    sigma: float = 0.0
    looks: int = 1
    density: float = 0.0
    low: float = 0.0
    high: float = 1.0
    orientation: Literal["horizontal", "vertical"] = "vertical"
    period: float = 8.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.family == "gaussian":
            if self.sigma < 0:
                raise DomainError(f"gaussian sigma must be >= 0, got {self.sigma}")
        elif self.family == "speckle":
            if not isinstance(self.looks, (int, np.integer)) or self.looks < 1:
                raise DomainError(f"speckle looks must be a positive integer, got {self.looks!r}")
        elif self.family == "impulse":
            if not 0.0 <= self.density <= 1.0:
                raise DomainError(f"impulse density must lie in [0, 1], got {self.density}")
        elif self.family == "stripe":
            if self.period <= 0:
                raise DomainError(f"stripe period must be positive, got {self.period}")
            if self.orientation not in ("horizontal", "vertical"):
                raise DomainError(f"unknown stripe orientation {self.orientation!r}")
        else:
            raise DomainError(f"unknown noise family {self.family!r}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def add_noise(img: RasterImage, spec: NoiseSpec) -> RasterImage:
    """Apply one noise family to every band. Deterministic for a fixed spec."""
    a = img.data
    if spec.family == "gaussian":
        out = a + spec.sigma * _rng(spec.seed).standard_normal(a.shape)
    elif spec.family == "speckle":
        if np.any(a < 0):
            raise DomainError("speckle is multiplicative, input samples must be >= 0")
        draws = _rng(spec.seed).standard_exponential((spec.looks,) + a.shape)
        out = a * (draws.sum(axis=0) / spec.looks)
    elif spec.family == "impulse":
        u = _rng(spec.seed).random(a.shape)
        out = np.where(u < spec.density / 2.0, spec.low,
                       np.where(u < spec.density, spec.high, a))
    else:  # stripe
        h, w = a.shape[1:]
        if spec.orientation == "vertical":
            profile = spec.amplitude * np.sin(2.0 * np.pi * np.arange(w) / spec.period)
            out = a + profile[np.newaxis, np.newaxis, :]
        else:
            profile = spec.amplitude * np.sin(2.0 * np.pi * np.arange(h) / spec.period)
            out = a + profile[np.newaxis, :, np.newaxis]
    return RasterImage(out, mask=img.mask, wavelengths=img.wavelengths)


def gamma_neglog_likelihood(x: float, y: float) -> float:
    """Pointwise multiplicative-noise fidelity log(x) + y/x."""
    if x <= 0:
        raise DomainError(f"fidelity is defined for x > 0, got x={x}")
    return math.log(x) + y / x


def load_spectral_response(path) -> BandMatrix:
    """Load a spectral response matrix from JSON {"rows", "cols", "entries"}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"spectral response file is not valid JSON: {exc}", offset=0) from exc
    for key in ("rows", "cols", "entries"):
        if key not in doc:
            raise FormatError(f"spectral response JSON missing key {key!r}", offset=0)
    entries = np.asarray(doc["entries"], dtype=np.float64)
    if entries.shape != (doc["rows"], doc["cols"]):
        raise FormatError(
            f"spectral response entries shape {entries.shape} disagrees with "
            f"declared {doc['rows']}x{doc['cols']}", offset=0,
        )
    return BandMatrix(entries)
