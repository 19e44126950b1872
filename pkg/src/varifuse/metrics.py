"""Restoration quality metrics and their JSON report form.

All metrics skip pixels marked invalid by either input's mask. PSNR is the
mean of per-band PSNRs; a zero-MSE band makes the result +inf, rendered as
the string "inf" in JSON. SSIM follows the standard windowed form (Gaussian
window, default 11 taps, sigma 1.5) averaged over windows fully made of
valid pixels and over bands. The spectral angle is reported in degrees with
zero-norm spectra skipped and counted. ENL is mean^2 over population
variance on a rectangular region of a single-band image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import DomainError, GeometryError
from .raster import RasterImage

__all__ = ["psnr", "ssim", "msa", "enl", "MetricReport", "evaluate_pair"]


def _joint_mask(a: RasterImage, b: RasterImage) -> np.ndarray | None:
    if a.mask is None and b.mask is None:
        return None
    m = np.ones((a.height, a.width), dtype=bool)
    if a.mask is not None:
        m &= a.mask
    if b.mask is not None:
        m &= b.mask
    return m


def _check_same_geometry(ref: RasterImage, test: RasterImage):
    if (ref.width, ref.height, ref.bands) != (test.width, test.height, test.bands):
        raise GeometryError(
            f"geometry mismatch: {ref.width}x{ref.height}x{ref.bands} vs "
            f"{test.width}x{test.height}x{test.bands}"
        )


def psnr(ref: RasterImage, test: RasterImage, peak: float) -> float:
    """Mean over bands of 10 log10(peak^2 / MSE_band), in dB."""
    _check_same_geometry(ref, test)
    if peak <= 0:
        raise DomainError(f"peak must be positive, got {peak}")
    m = _joint_mask(ref, test)
    vals = []
    for b in range(ref.bands):
        d = ref.data[b] - test.data[b]
        if m is not None:
            d = d[m]
        if d.size == 0:
            raise DomainError("no valid pixels to compare")
        mse = float((d * d).mean())
        vals.append(math.inf if mse == 0.0 else 10.0 * math.log10(peak * peak / mse))
    return float(np.mean(vals)) if all(map(math.isfinite, vals)) else math.inf


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    k = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (k / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(
    ref: RasterImage,
    test: RasterImage,
    peak: float = 1.0,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity over valid windows, averaged over bands."""
    _check_same_geometry(ref, test)
    if window > min(ref.width, ref.height):
        raise GeometryError(
            f"window {window} exceeds image extent {ref.width}x{ref.height}"
        )
    if peak <= 0:
        raise DomainError(f"peak must be positive, got {peak}")
    win = _gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    m = _joint_mask(ref, test)
    valid = None
    if m is not None:
        hits = signal.convolve2d(m.astype(np.float64), np.ones_like(win), mode="valid")
        valid = hits >= win.size - 0.5  # windows made entirely of valid pixels
        if not valid.any():
            raise DomainError("no fully valid windows to compare")
    band_vals = []
    for b in range(ref.bands):
        x, y = ref.data[b], test.data[b]
        mu_x = signal.convolve2d(x, win, mode="valid")
        mu_y = signal.convolve2d(y, win, mode="valid")
        xx = signal.convolve2d(x * x, win, mode="valid") - mu_x ** 2
        yy = signal.convolve2d(y * y, win, mode="valid") - mu_y ** 2
        xy = signal.convolve2d(x * y, win, mode="valid") - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2))
        band_vals.append(float(s.mean()) if valid is None else float(s[valid].mean()))
    return float(np.mean(band_vals))


def msa(ref: RasterImage, test: RasterImage) -> tuple[float, int]:
    """Mean spectral angle in degrees, plus the count of skipped pixels.

    Pixels whose spectrum has zero norm in either image are skipped (and
    counted); masked pixels are excluded outright.
    """
    _check_same_geometry(ref, test)
    if ref.bands < 2:
        raise GeometryError(f"spectral angle needs >= 2 bands, got {ref.bands}")
    a = ref.data.reshape(ref.bands, -1)
    b = test.data.reshape(test.bands, -1)
    m = _joint_mask(ref, test)
    if m is not None:
        keep = m.ravel()
        a, b = a[:, keep], b[:, keep]
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    ok = (na > 0) & (nb > 0)
    skipped = int((~ok).sum())
    if not ok.any():
        raise DomainError("every spectrum had zero norm; nothing to compare")
    cosang = (a[:, ok] * b[:, ok]).sum(axis=0) / (na[ok] * nb[ok])
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(ang.mean()), skipped


def enl(img: RasterImage, region: tuple[int, int, int, int]) -> float:
    """Equivalent number of looks mean^2 / var on region (x, y, width, height)."""
    if img.bands != 1:
        raise GeometryError(f"ENL is defined for single-band images, got {img.bands} bands")
    x, y, w, h = region
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > img.width or y + h > img.height:
        raise GeometryError(f"region {region} does not fit inside {img.width}x{img.height}")
    patch = img.data[0, y:y + h, x:x + w]
    if img.mask is not None:
        patch = patch[img.mask[y:y + h, x:x + w]]
    if patch.size < 4:
        raise DomainError(f"ENL region must hold at least 4 valid pixels, got {patch.size}")
    mean = float(patch.mean())
    var = float(patch.var())  # population variance
    return math.inf if var == 0.0 else mean * mean / var


def _render(v):
    if v is None:
        return None
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float | None = None
    ssim: float | None = None
    msa_deg: float | None = None
    enl: float | None = None
    skipped_pixels: int = 0

    def to_dict(self) -> dict:
        return {
            "psnr_db": _render(self.psnr_db),
            "ssim": _render(self.ssim),
            "msa_deg": _render(self.msa_deg),
            "enl": _render(self.enl),
            "skipped_pixels": self.skipped_pixels,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def evaluate_pair(
    ref: RasterImage,
    test: RasterImage,
    peak: float = 1.0,
    region: tuple[int, int, int, int] | None = None,
) -> MetricReport:
    """Assemble the standard report for a reference/test pair."""
    angle, skipped = (None, 0)
    if ref.bands >= 2:
        angle, skipped = msa(ref, test)
    enl_val = None
    if region is not None and test.bands == 1:
        enl_val = enl(test, region)
    ssim_val = None
    if min(ref.width, ref.height) >= 11:
        ssim_val = ssim(ref, test, peak=peak)
    return MetricReport(
        psnr_db=psnr(ref, test, peak),
        ssim=ssim_val,
        msa_deg=angle,
        enl=enl_val,
        skipped_pixels=skipped,
    )
