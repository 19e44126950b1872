"""End-to-end restoration and fusion pipelines.

Each task wires operators, a fidelity and a prior into one of the solver
loops and returns ``(RasterImage, SolverReport)``. The despeckling tasks
work on the multiplicative-noise fidelity log(x) + y/x; the plug-and-play
variant alternates a denoiser step with an exact pointwise X-step, solving
the per-pixel cubic

    rho x^3 - rho v x^2 + lam x - lam y = 0

(the stationarity condition of lam (log x + y/x) + rho/2 (x - v)^2) by
safeguarded Newton from max(v, floor), clamped to x >= floor. Under this
convention the prior carries unit weight and the denoiser noise level is
sigma_t = sqrt(1 / rho_t).

The hybrid-noise hyperspectral task splits the observation as
Y = X + S + N (sparse S, dense N) with an ADMM loop whose Z-auxiliary
carries the denoiser; the fusion tasks implement a fully quadratic
gradient-transplant sharpener (conjugate gradient on its normal equations)
and a spectral-subspace sharpener whose coefficient planes are denoised
inside ADMM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from . import _diff
from .errors import ConfigError, DomainError, GeometryError, SubspaceError
from .operators import BlockMean, Geometry, LinearOperator, SpectralResponseOperator
from .priors import PriorHandle, TVPrior, denoise, tv_value
from .raster import BandMatrix, RasterImage
from .solvers import SolverConfig, SolverReport, conjugate_gradient, gradient_descent
from .solvers import GammaFidelity, ProblemSpec, SmoothedTVTerm

__all__ = [
    "DespeckleConfig",
    "HsiDenoiseConfig",
    "FusionInputs",
    "despeckle_pnp",
    "despeckle_aa_tv",
    "hsi_denoise_pnp",
    "fuse_dlvm",
    "fuse_cnnfus",
    "gradient_priors_from_highres",
    "estimate_spectral_basis",
    "evaluate_model_loss",
]

_RHO_CAP_FACTOR = 1e6


# -- SAR despeckling ---------------------------------------------------------


@dataclass(frozen=True)
class DespeckleConfig:
    lam: float = 0.3
    prior: PriorHandle = field(default_factory=TVPrior)
    solver: SolverConfig = field(default_factory=SolverConfig)
    floor: float = 1e-6
    x_step: Literal["newton", "gd"] = "newton"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"fidelity weight must be >= 0, got {self.lam}")
        if self.floor <= 0:
            raise ConfigError(f"positivity floor must be positive, got {self.floor}")
        if self.x_step not in ("newton", "gd"):
            raise ConfigError(f"x_step must be 'newton' or 'gd', got {self.x_step!r}")


def _check_speckled(y: RasterImage):
    if y.bands != 1:
        raise GeometryError(f"despeckling expects a single-band image, got {y.bands} bands")
    if np.any(y.data < 0):
        raise DomainError("despeckling input must be non-negative")


def _gamma_x_newton(y: np.ndarray, v: np.ndarray, lam: float, rho: float, floor: float):
    """Root of the per-pixel cubic, clamped to >= floor. Returns (x, residual)."""
    if lam == 0.0:
        x = np.maximum(v, floor)
        return x, np.abs(rho * x * x * (x - v))

    def cubic(x):
        return rho * x ** 3 - rho * v * x ** 2 + lam * x - lam * y

    lo = np.full_like(v, floor)
    hi = np.maximum(np.maximum(v, y), floor)
    c_lo = cubic(lo)
    c_hi = cubic(hi)
    # cubic(hi) >= 0 by construction; a positive cubic at the floor means the
    # root sits below it, so those pixels clamp.
    clamped = c_lo > 0
    x = np.maximum(v, floor)
    for _ in range(80):
        c = cubic(x)
        if np.abs(c).max() <= 1e-12 * max(1.0, rho):
            break
        d = 3.0 * rho * x ** 2 - 2.0 * rho * v * x + lam
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - c / d
        hi = np.where(c > 0, x, hi)
        lo = np.where(c < 0, x, lo)
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(inside, newton, 0.5 * (lo + hi))
    x = np.where(clamped, floor, np.maximum(x, floor))
    return x, np.abs(cubic(x))


def despeckle_pnp(y: RasterImage, cfg: DespeckleConfig) -> tuple[RasterImage, SolverReport]:
    """Plug-and-play despeckling: denoiser V-step, pointwise cubic X-step."""
    _check_speckled(y)
    yv = y.data
    cf = cfg.solver
    x = np.maximum(yv, cfg.floor)
    rho = cf.rho0
    rho_cap = cf.rho0 * _RHO_CAP_FACTOR
    report = SolverReport(aux={"cubic_residual_max": [], "rho": [], "fidelity": []})
    is_tv = isinstance(cfg.prior, TVPrior)
    report.aux["energy_is_full"] = is_tv
    for it in range(1, cf.max_iters + 1):
        sigma = np.sqrt(1.0 / rho)
        arg = sigma if cf.noise_arg == "std" else sigma * sigma
        v = denoise(cfg.prior, y.with_data(x), arg).data
        x_prev = x
        if cfg.x_step == "newton":
            x, resid = _gamma_x_newton(yv, v, cfg.lam, rho, cfg.floor)
        else:
            x = x_prev.copy()
            for _ in range(20):
                g = cfg.lam * (1.0 / x - yv / (x * x)) + rho * (x - v)
                x = np.maximum(x - cf.step_size * g, cfg.floor)
            resid = np.abs(rho * x ** 3 - rho * v * x ** 2 + cfg.lam * x - cfg.lam * yv)
        fid = float((np.log(x) + yv / x).sum())
        report.aux["fidelity"].append(cfg.lam * fid)
        report.aux["cubic_residual_max"].append(float(resid.max()))
        report.aux["rho"].append(rho)
        surrogate = cfg.lam * fid + 0.5 * rho * float(((x - v) ** 2).sum())
        if is_tv:
            surrogate += cfg.prior.scale * tv_value(v)
        report.energy.append(surrogate)
        report.iterations = it
        rho = min(rho * cf.rho_gamma, rho_cap)
        if float(np.linalg.norm(x - x_prev)) / max(float(np.linalg.norm(x_prev)), 1e-12) < cf.tol:
            report.stop_reason = "tolerance"
            break
    return y.with_data(x), report


def despeckle_aa_tv(
    y: RasterImage,
    lam: float,
    cfg: SolverConfig,
    tv_epsilon: float = 1e-3,
    floor: float = 1e-6,
) -> tuple[RasterImage, SolverReport]:
    """Classical variational despeckling: projected descent on the smooth energy

        lam * sum(log x + y/x) + sum sqrt(|grad x|^2 + eps^2),

    with iterates clamped to x >= floor.
    """
    _check_speckled(y)
    if lam < 0:
        raise ConfigError(f"fidelity weight must be >= 0, got {lam}")
    spec = ProblemSpec(GammaFidelity(y, lam), ((SmoothedTVTerm(tv_epsilon), 1.0),))
    x0 = y.with_data(np.maximum(y.data, floor))
    return gradient_descent(spec, x0, cfg, project=lambda a: np.maximum(a, floor))


# -- hybrid-noise hyperspectral denoising -------------------------------------


@dataclass(frozen=True)
class HsiDenoiseConfig:
    tau: float = 0.1
    lambda_s: float = 1.0
    beta: float = 10.0
    prior: PriorHandle = field(default_factory=TVPrior)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.tau < 0 or self.lambda_s < 0 or self.beta < 0:
            raise ConfigError("hybrid-noise weights must be >= 0")


def hsi_denoise_pnp(y: RasterImage, cfg: HsiDenoiseConfig) -> tuple[RasterImage, SolverReport]:
    """Split Y = X + S + N and denoise X through the plug-in prior.

    ADMM on ||Y - X - S - N||^2 + tau g(Z) + lambda_s ||S||_1 + beta ||N||^2
    subject to X = Z. The report's aux dict carries the final sparse and
    dense components plus all four residual traces.
    """
    from .priors import soft_threshold

    cf = cfg.solver
    yv = y.data
    x = yv.copy()
    s = np.zeros_like(yv)
    n = np.zeros_like(yv)
    rho = cf.rho0
    # Seeding Z with a denoised observation (instead of Y itself) breaks the
    # X = Z = Y stall at iteration one, so outliers start migrating into S
    # immediately. With zero prior weight this is still exactly Y.
    sigma0 = np.sqrt(cfg.tau / (2.0 * rho))
    z = denoise(cfg.prior, y, sigma0 if cf.noise_arg == "std" else sigma0 ** 2).data
    w = np.zeros_like(yv)
    rho_cap = cf.rho0 * _RHO_CAP_FACTOR
    report = SolverReport(aux={"fidelity_residuals": [], "change": [], "rho": []})
    for it in range(1, cf.max_iters + 1):
        x_prev = x
        x = (yv - s - n + rho * (z - w)) / (1.0 + rho)
        s = soft_threshold(yv - x - n, cfg.lambda_s / 2.0)
        n = (yv - x - s) / (1.0 + cfg.beta)
        sigma = np.sqrt(cfg.tau / (2.0 * rho))
        arg = sigma if cf.noise_arg == "std" else sigma * sigma
        z_prev = z
        z = denoise(cfg.prior, y.with_data(x + w), arg).data
        w = w + x - z
        primal = float(np.linalg.norm(x - z))
        report.primal_residuals.append(primal)
        report.dual_residuals.append(2.0 * rho * float(np.linalg.norm(z - z_prev)))
        report.aux["fidelity_residuals"].append(float(np.linalg.norm(yv - x - s - n)))
        change = max(
            float(np.linalg.norm(x - x_prev)) / max(float(np.linalg.norm(x_prev)), 1e-12),
            float(np.linalg.norm(z - z_prev)) / max(float(np.linalg.norm(z_prev)), 1e-12),
        )
        report.aux["change"].append(change)
        report.aux["rho"].append(rho)
        report.iterations = it
        rho = min(rho * cf.rho_gamma, rho_cap)
        # x1 equals y exactly under the chosen init, so the stop rule must
        # also see the auxiliary and the splitting gap.
        if change < cf.tol and primal <= cf.tol * max(float(np.linalg.norm(x)), 1e-12):
            report.stop_reason = "tolerance"
            break
    report.aux["sparse"] = s
    report.aux["dense"] = n
    return y.with_data(x), report


# -- fusion --------------------------------------------------------------------


@dataclass(frozen=True)
class FusionInputs:
    """Observation pair plus degradation models shared by the fusion tasks.

    ``y`` is the low-spatial / high-spectral image (S bands); ``z`` the
    high-spatial / low-spectral one (s bands). ``h_op`` maps the target
    geometry to y's geometry band by band; ``p`` mixes S bands down to s.
    """

    y: RasterImage
    z: RasterImage
    h_op: LinearOperator
    p: BandMatrix | None = None
    gamma: float = 1.0
    lam: float = 0.01
    subspace: int | None = None

    def __post_init__(self):
        big = Geometry(self.z.width, self.z.height, self.y.bands)
        small = Geometry(self.y.width, self.y.height, self.y.bands)
        if tuple(self.h_op.in_geom) != tuple(big) or tuple(self.h_op.out_geom) != tuple(small):
            raise GeometryError(
                f"h_op must map {big} to {small}, maps {self.h_op.in_geom} to {self.h_op.out_geom}"
            )
        if self.p is not None:
            if self.p.rows != self.z.bands or self.p.cols != self.y.bands:
                raise GeometryError(
                    f"spectral response must be {self.z.bands}x{self.y.bands}, "
                    f"got {self.p.rows}x{self.p.cols}"
                )
        if self.gamma < 0 or self.lam < 0:
            raise ConfigError("fusion weights must be >= 0")


def gradient_priors_from_highres(z: RasterImage, bands: int) -> tuple[RasterImage, RasterImage]:
    """Fallback gradient priors: transplant the high-resolution gradients.

    The mean over z's bands is differentiated and the result replicated to
    the requested band count.
    """
    base = z.data.mean(axis=0)
    g1 = np.broadcast_to(_diff.grad_x(base), (bands,) + base.shape).copy()
    g2 = np.broadcast_to(_diff.grad_y(base), (bands,) + base.shape).copy()
    return RasterImage(g1), RasterImage(g2)


def fuse_dlvm(
    inputs: FusionInputs,
    g1: RasterImage | None = None,
    g2: RasterImage | None = None,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[RasterImage, SolverReport]:
    """Gradient-transplant fusion: one conjugate-gradient solve of

        0.5 ||Y - H X||^2 + (gamma/2) sum_j ||grad_j X - G_j||^2
        + (lam/2) ||Q X||^2

    where Q is the five-point Laplacian. Absent G priors fall back to the
    transplanted high-resolution gradients of ``inputs.z``.
    """
    from .priors import _LAP_STENCIL

    if g1 is None or g2 is None:
        g1, g2 = gradient_priors_from_highres(inputs.z, inputs.y.bands)
    hi = inputs.h_op.in_geom
    for name, g in (("g1", g1), ("g2", g2)):
        if (g.width, g.height, g.bands) != tuple(hi):
            raise GeometryError(f"{name} geometry {(g.width, g.height, g.bands)} must be {tuple(hi)}")
    h_op, gamma, lam = inputs.h_op, inputs.gamma, inputs.lam

    def normal_op(img: RasterImage) -> RasterImage:
        a = img.data
        out = h_op._backward(h_op._forward(a))
        if gamma > 0:
            out = out + gamma * (_diff.grad_x_adj(_diff.grad_x(a)) + _diff.grad_y_adj(_diff.grad_y(a)))
        if lam > 0:
            q = ndimage.correlate(a, _LAP_STENCIL, mode="reflect")
            out = out + lam * ndimage.correlate(q, _LAP_STENCIL, mode="reflect")
        return RasterImage(out)

    rhs = h_op._backward(inputs.y.data)
    if gamma > 0:
        rhs = rhs + gamma * (_diff.grad_x_adj(g1.data) + _diff.grad_y_adj(g2.data))
    return conjugate_gradient(normal_op, RasterImage(rhs), cfg=cfg)


def estimate_spectral_basis(y: RasterImage, subspace: int | None = None) -> BandMatrix:
    """Orthonormal spectral basis (subspace x bands) from the SVD of y.

    Without an explicit dimension, the smallest subspace capturing 99.9%
    of the spectral energy is chosen, capped at 12. Asking for more than
    the achievable rank raises SubspaceError naming that rank.
    """
    mat = y.data.reshape(y.bands, -1).T  # pixels x bands
    _, sv, vt = np.linalg.svd(mat, full_matrices=False)
    rank = int((sv > sv[0] * 1e-10).sum()) if sv.size and sv[0] > 0 else 0
    if rank == 0:
        raise SubspaceError("image is identically zero; no spectral subspace exists", achievable_rank=0)
    if subspace is None:
        energy = np.cumsum(sv ** 2) / float((sv ** 2).sum())
        subspace = min(int(np.searchsorted(energy, 0.999) + 1), 12, rank)
    if subspace < 1:
        raise ConfigError(f"subspace dimension must be >= 1, got {subspace}")
    if subspace > rank:
        raise SubspaceError(
            f"requested subspace {subspace} exceeds the achievable rank {rank}",
            achievable_rank=rank,
        )
    return BandMatrix(vt[:subspace])


def fuse_cnnfus(
    inputs: FusionInputs,
    prior: PriorHandle,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[RasterImage, SolverReport]:
    """Subspace fusion with plug-in denoising of the coefficient planes.

    X = alpha psi with psi an orthonormal spectral basis estimated from y.
    ADMM alternates a conjugate-gradient solve of the coefficient normal
    equations

        (B^T H^T H B + gamma B^T P^T P B + rho I) alpha
            = B^T H^T Y + gamma B^T P^T Z + rho (V - W)

    (B maps coefficients to bands) with V = denoise(alpha + W, sigma_t),
    sigma_t = sqrt(lam / (2 rho_t)), and W <- W + alpha - V.
    """
    if inputs.p is None:
        raise ConfigError("subspace fusion needs the spectral response matrix p")
    if inputs.z.bands >= inputs.y.bands:
        raise GeometryError(
            f"z must have fewer bands than y, got {inputs.z.bands} >= {inputs.y.bands}"
        )
    psi = estimate_spectral_basis(inputs.y, inputs.subspace)
    L = psi.rows
    wid, hgt = inputs.z.width, inputs.z.height
    basis = SpectralResponseOperator(BandMatrix(psi.entries.T), wid, hgt)
    mix = SpectralResponseOperator(inputs.p, wid, hgt)
    h_op, gamma, lam = inputs.h_op, inputs.gamma, inputs.lam
    cap = cfg.rho0 * _RHO_CAP_FACTOR

    rhs_fixed = basis._backward(h_op._backward(inputs.y.data)) \
        + gamma * basis._backward(mix._backward(inputs.z.data))

    alpha = np.zeros((L, hgt, wid))
    v = alpha.copy()
    w = np.zeros_like(alpha)
    rho = cfg.rho0
    report = SolverReport(aux={"rho": [], "energy_is_full": False})
    for it in range(1, cfg.max_iters + 1):
        rho_now = rho

        def normal_op(img: RasterImage) -> RasterImage:
            a = img.data
            x = basis._forward(a)
            out = basis._backward(h_op._backward(h_op._forward(x)))
            out = out + gamma * basis._backward(mix._backward(mix._forward(x)))
            return RasterImage(out + rho_now * a)

        rhs = RasterImage(rhs_fixed + rho_now * (v - w))
        alpha_prev = alpha
        alpha = conjugate_gradient(normal_op, rhs, x0=RasterImage(alpha), cfg=cfg)[0].data
        sigma = np.sqrt(lam / (2.0 * rho_now))
        arg = sigma if cfg.noise_arg == "std" else sigma * sigma
        v_prev = v
        v = denoise(prior, RasterImage(alpha + w), arg).data
        w = w + alpha - v
        report.primal_residuals.append(float(np.linalg.norm(alpha - v)))
        report.dual_residuals.append(2.0 * rho_now * float(np.linalg.norm(v - v_prev)))
        x_bands = basis._forward(alpha)
        e = float(((h_op._forward(x_bands) - inputs.y.data) ** 2).sum()) \
            + gamma * float(((mix._forward(x_bands) - inputs.z.data) ** 2).sum())
        report.energy.append(e)
        report.aux["rho"].append(rho_now)
        report.iterations = it
        rho = min(rho * cfg.rho_gamma, cap)
        change = float(np.linalg.norm(alpha - alpha_prev)) / max(float(np.linalg.norm(alpha_prev)), 1e-12)
        primal = float(np.linalg.norm(alpha - v))
        if change < cfg.tol and primal <= cfg.tol * max(float(np.linalg.norm(alpha)), 1e-12):
            report.stop_reason = "tolerance"
            break
    fused = basis._forward(alpha)
    report.aux["basis"] = psi
    return RasterImage(fused, wavelengths=inputs.y.wavelengths), report


# -- loss evaluation -------------------------------------------------------------


def evaluate_model_loss(
    x: RasterImage,
    y: RasterImage,
    p_op: LinearOperator | None = None,
    lam: float = 0.0,
    beta: float = 0.0,
    x_label: RasterImage | None = None,
    z: RasterImage | None = None,
    p_matrix: BandMatrix | None = None,
    kernel: np.ndarray | None = None,
    factor: int | None = None,
) -> dict:
    """Scalar breakdown of a model-constrained training loss. No optimization.

    Two forms share this entry point. The constrained form (default)
    evaluates

        fidelity ||y - P x||_F^2  +  prior lam * TV(x)
        + label beta * ||x - x_label||_F        (note: unsquared norm)

    where ``p_op`` defaults to the identity. Passing ``z``, ``p_matrix``,
    ``kernel`` and ``factor`` switches to the blind super-resolution form

        spectral ||z - P x||^2 + spatial ||y - (x * kernel) down_r||^2
        + regularizer lam (||kernel||^2 + ||P||_F^2).

    Returns the term values plus their sum under "total".
    """
    blind = any(v is not None for v in (z, p_matrix, kernel, factor))
    if blind:
        if z is None or p_matrix is None or kernel is None or factor is None:
            raise ConfigError("blind form needs z, p_matrix, kernel and factor together")
        mix = SpectralResponseOperator(p_matrix, x.width, x.height)
        if p_matrix.cols != x.bands or z.bands != p_matrix.rows:
            raise GeometryError(
                f"spectral response {p_matrix.rows}x{p_matrix.cols} does not tie "
                f"x ({x.bands} bands) to z ({z.bands} bands)"
            )
        spectral = float(((mix._forward(x.data) - z.data) ** 2).sum())
        k = np.asarray(kernel, dtype=np.float64)
        if k.ndim != 2:
            raise GeometryError(f"blur kernel must be 2-D, got ndim={k.ndim}")
        blurred = ndimage.convolve(x.data, k[np.newaxis], mode="reflect")
        down = BlockMean(Geometry(x.width, x.height, x.bands), factor)
        low = down._forward(blurred)
        if low.shape != y.data.shape:
            raise GeometryError(
                f"downsampled x has shape {low.shape}, observation has {y.data.shape}"
            )
        spatial = float(((low - y.data) ** 2).sum())
        reg = lam * (float((k * k).sum()) + float((p_matrix.entries ** 2).sum()))
        return {
            "spectral": spectral,
            "spatial": spatial,
            "regularizer": reg,
            "total": spectral + spatial + reg,
        }

    px = x.data if p_op is None else p_op._forward(x.data)
    if px.shape != y.data.shape:
        raise GeometryError(f"projected x has shape {px.shape}, observation has {y.data.shape}")
    fidelity = float(((y.data - px) ** 2).sum())
    prior = lam * tv_value(x)
    label = 0.0
    if x_label is not None:
        if x_label.data.shape != x.data.shape:
            raise GeometryError("label image geometry must match x")
        label = beta * float(np.linalg.norm(x.data - x_label.data))
    return {
        "fidelity": fidelity,
        "prior": prior,
        "label": label,
        "total": fidelity + prior + label,
    }
