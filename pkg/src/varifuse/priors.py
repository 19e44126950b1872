"""Denoiser priors: the replaceable regularization slot of the solvers.

Every prior is a handle with one operation, ``denoise(prior, img, sigma)``,
where ``sigma`` is a Gaussian noise standard deviation. Built-in handles map
sigma onto their native strength as follows:

==================== =====================================================
tv                   prox weight = scale * sigma^2 (scale defaults to 1),
                     so the denoiser is the exact proximal map of
                     weight * TV at that scale
laplacian-quadratic  solves (I + sigma^2 * grad^T grad) u = img
l1-synthesis         per-pixel spectral sparse coding with lam = sigma^2;
                     with an identity dictionary this is soft_threshold
median               ignores sigma entirely (rank filter)
nlm                  filtering strength h = factor * sigma * sqrt(patch
                     pixel count), factor defaults to 0.4
external             sigma is forwarded verbatim over the PNP1 pipe
==================== =====================================================

Denoisers preserve geometry and metadata and return finite samples. The
sigma = 0 edge case returns the input unchanged for every built-in except
median, which is sigma-blind by definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import ndimage

from . import _diff
from .errors import DomainError, GeometryError
from .plugin_client import ExternalDenoiser
from .raster import BandMatrix, RasterImage

__all__ = [
    "PriorHandle",
    "TVPrior",
    "LaplacianQuadraticPrior",
    "L1SynthesisPrior",
    "MedianPrior",
    "NLMPrior",
    "ExternalPrior",
    "denoise",
    "tv_prox",
    "tv_value",
    "soft_threshold",
    "ista_sparse_code",
    "laplacian_apply",
]


def tv_value(img: RasterImage | np.ndarray) -> float:
    """Isotropic total variation of all bands."""
    a = img.data if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    return _diff.tv_value(a)


def soft_threshold(values, tau: float):
    """Shrink toward zero: sign(v) * max(|v| - tau, 0). Scalar or array."""
    if tau < 0:
        raise DomainError(f"threshold must be >= 0, got {tau}")
    v = np.asarray(values, dtype=np.float64)
    out = np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
    return float(out) if np.isscalar(values) else out


def tv_prox(img: RasterImage, weight: float, iters: int = 30, dual_step: float = 0.25) -> RasterImage:
    """Proximal map of weight * TV via the dual fixed-point scheme.

    Solves min_u 0.5 ||u - img||^2 + weight * TV(u) with forward differences
    and a symmetric boundary. weight = 0 returns the input exactly.
    """
    if weight < 0:
        raise DomainError(f"tv weight must be >= 0, got {weight}")
    if weight == 0 or iters == 0:
        return img.with_data(img.data)
    f = img.data
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    for _ in range(iters):
        div_p = -(_diff.grad_x_adj(px) + _diff.grad_y_adj(py))
        u = div_p - f / weight
        gx, gy = _diff.grad_x(u), _diff.grad_y(u)
        denom = 1.0 + dual_step * np.sqrt(gx ** 2 + gy ** 2)
        px = (px + dual_step * gx) / denom
        py = (py + dual_step * gy) / denom
    div_p = -(_diff.grad_x_adj(px) + _diff.grad_y_adj(py))
    return img.with_data(f - weight * div_p)


def ista_sparse_code(signal, dictionary: BandMatrix, lam: float, iters: int = 50) -> np.ndarray:
    """Sparse synthesis coefficients by proximal gradient iteration.

    Minimizes 0.5 ||signal - psi a||^2 + lam ||a||_1 from a = 0 with step
    1 / ||psi||^2 (power-iteration estimate). The objective is
    non-increasing along the iterates.
    """
    if lam < 0:
        raise DomainError(f"lam must be >= 0, got {lam}")
    psi = dictionary.entries
    y = np.atleast_2d(np.asarray(signal, dtype=np.float64))  # (nsignals, m)
    single = np.asarray(signal).ndim == 1
    if y.shape[1] != psi.shape[0]:
        raise GeometryError(
            f"signal length {y.shape[1]} does not match dictionary rows {psi.shape[0]}"
        )
    step = 1.0 / _operator_norm_sq(psi)
    alpha = np.zeros((y.shape[0], psi.shape[1]))
    for _ in range(iters):
        resid = y - alpha @ psi.T
        alpha = soft_threshold(alpha + step * (resid @ psi), step * lam)
    return alpha[0] if single else alpha


def _operator_norm_sq(psi: np.ndarray) -> float:
    """Largest eigenvalue of psi^T psi, by power iteration from a fixed start."""
    gram = psi.T @ psi
    v = np.linspace(1.0, 2.0, gram.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(100):
        w = gram @ v
        est = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DomainError("dictionary has zero norm")
        v = w / norm
    if est <= 0:
        raise DomainError("dictionary has zero norm")
    return est


_LAP_STENCIL = np.array([[[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]])


def laplacian_apply(img: RasterImage) -> RasterImage:
    """Five-point Laplacian per band, symmetric boundary. Self-adjoint."""
    return img.with_data(ndimage.correlate(img.data, _LAP_STENCIL, mode="reflect"))


# -- prior handles ---------------------------------------------------------


@dataclass(frozen=True)
class TVPrior:
    iters: int = 30
    dual_step: float = 0.25
    scale: float = 1.0

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        return tv_prox(img, self.scale * sigma * sigma, self.iters, self.dual_step)


@dataclass(frozen=True)
class LaplacianQuadraticPrior:
    cg_iters: int = 60
    cg_tol: float = 1e-12

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        if sigma == 0:
            return img.with_data(img.data)
        w = sigma * sigma

        def op(a):
            return a - w * ndimage.correlate(a, _LAP_STENCIL, mode="reflect")

        # Small private CG; the system (I - w * Lap) is SPD for w > 0.
        b = img.data
        x = b.copy()
        r = b - op(x)
        p = r.copy()
        rs = float((r * r).sum())
        for _ in range(self.cg_iters):
            if np.sqrt(rs) <= self.cg_tol * np.linalg.norm(b):
                break
            ap = op(p)
            alpha = rs / float((p * ap).sum())
            x = x + alpha * p
            r = r - alpha * ap
            rs_new = float((r * r).sum())
            p = r + (rs_new / rs) * p
            rs = rs_new
        return img.with_data(x)


@dataclass(frozen=True)
class L1SynthesisPrior:
    """Spectral sparse coding; a None dictionary means the identity basis."""

    dictionary: BandMatrix | None = None
    iters: int = 50

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        if sigma == 0:
            return img.with_data(img.data)
        psi = self.dictionary
        if psi is None:
            psi = BandMatrix(np.eye(img.bands))
        if psi.rows != img.bands:
            raise GeometryError(
                f"dictionary rows {psi.rows} do not match band count {img.bands}"
            )
        spectra = img.data.reshape(img.bands, -1).T  # (npixels, bands)
        alpha = ista_sparse_code(spectra, psi, sigma * sigma, self.iters)
        recon = (alpha @ psi.entries.T).T.reshape(img.data.shape)
        return img.with_data(recon)


@dataclass(frozen=True)
class MedianPrior:
    radius: int = 1

    def __post_init__(self):
        if self.radius < 1:
            raise DomainError(f"median radius must be >= 1, got {self.radius}")

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        size = 2 * self.radius + 1
        out = np.stack([
            ndimage.median_filter(band, size=size, mode="reflect") for band in img.data
        ])
        return img.with_data(out)


@dataclass(frozen=True)
class NLMPrior:
    patch_radius: int = 1
    search_radius: int = 3
    strength: float = 0.4

    def __post_init__(self):
        if self.patch_radius < 1 or self.search_radius < 1:
            raise DomainError("nlm radii must be >= 1")
        if self.strength <= 0:
            raise DomainError(f"nlm strength must be positive, got {self.strength}")

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        if sigma == 0:
            return img.with_data(img.data)
        out = np.stack([
            _nlm_band(band, sigma, self.patch_radius, self.search_radius, self.strength)
            for band in img.data
        ])
        return img.with_data(out)


def _nlm_band(band: np.ndarray, sigma: float, pr: int, sr: int, strength: float) -> np.ndarray:
    """Shift-accumulated non-local means over a (2 sr + 1)^2 search window.

    Patch distances are mean squared differences over the (2 pr + 1)^2
    patch; weights exp(-d2 / (strength * sigma)^2) include the self weight
    and are sum-normalized.
    """
    h2 = (strength * sigma) ** 2
    size = 2 * pr + 1
    pad = np.pad(band, sr, mode="symmetric")
    hgt, wid = band.shape
    num = np.zeros_like(band)
    den = np.zeros_like(band)
    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            shifted = pad[sr + dy:sr + dy + hgt, sr + dx:sr + dx + wid]
            d2 = ndimage.uniform_filter((band - shifted) ** 2, size=size, mode="reflect")
            w = np.exp(-d2 / h2)
            num += w * shifted
            den += w
    return num / den


@dataclass(frozen=True)
class ExternalPrior:
    """A denoiser living in another process behind the PNP1 pipe.

    One child per handle; concurrent calls on the same handle serialize.
    """

    command: str
    timeout: float = 30.0
    _client: ExternalDenoiser = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_client", ExternalDenoiser(self.command, self.timeout))

    def _denoise(self, img: RasterImage, sigma: float) -> RasterImage:
        return img.with_data(self._client.denoise(img.data, sigma))

    def close(self):
        self._client.close()


PriorHandle = Union[
    TVPrior, LaplacianQuadraticPrior, L1SynthesisPrior, MedianPrior, NLMPrior, ExternalPrior
]


def denoise(prior: PriorHandle, img: RasterImage, sigma: float) -> RasterImage:
    """Apply one denoising step of the given strength."""
    if not np.isfinite(sigma) or sigma < 0:
        raise DomainError(f"sigma must be finite and >= 0, got {sigma}")
    out = prior._denoise(img, float(sigma))
    if not np.all(np.isfinite(out.data)):
        raise DomainError(f"{type(prior).__name__} produced non-finite samples")
    return out
