"""Variational restoration and fusion toolkit for remote sensing rasters.

The package is organized in layers: rasters and file formats, linear
degradation operators and noise synthesis, denoising priors (including
external denoisers spoken to over a framed stdio protocol), generic
solvers, task-level pipelines, and fidelity metrics.
"""

from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    GeometryError,
    OperatorError,
    PluginError,
    SubspaceError,
    UnsupportedFormatError,
    VarifuseError,
)
from .metrics import MetricReport, enl, evaluate_pair, msa, psnr, ssim
from .operators import (
    BlockMean,
    CompositeOperator,
    GainOperator,
    GaussianBlur,
    Geometry,
    Identity,
    LinearOperator,
    MaskOperator,
    NoiseSpec,
    SpectralResponseOperator,
    add_noise,
    apply_affine_degradation,
    gamma_neglog_likelihood,
    gaussian_kernel,
    load_spectral_response,
)
from .plugin_client import ExternalDenoiser, pack_frame, unpack_header
from .priors import (
    ExternalPrior,
    L1SynthesisPrior,
    LaplacianQuadraticPrior,
    MedianPrior,
    NLMPrior,
    PriorHandle,
    TVPrior,
    denoise,
    ista_sparse_code,
    laplacian_apply,
    soft_threshold,
    tv_prox,
    tv_value,
)
from .raster import BandMatrix, RasterImage, create_raster, import_pgm, read_raster, write_raster
from .solvers import (
    GammaFidelity,
    LaplacianQuadraticTerm,
    ProblemSpec,
    QuadraticFidelity,
    SmoothedTVTerm,
    SolverConfig,
    SolverReport,
    admm_solve,
    conjugate_gradient,
    energy_of,
    finite_difference_gradient_check,
    gradient_descent,
    gradient_of,
    hqs_solve,
)
from .tasks import (
    DespeckleConfig,
    FusionInputs,
    HsiDenoiseConfig,
    despeckle_aa_tv,
    despeckle_pnp,
    estimate_spectral_basis,
    evaluate_model_loss,
    fuse_cnnfus,
    fuse_dlvm,
    gradient_priors_from_highres,
    hsi_denoise_pnp,
)

__version__ = "0.1.0"

__all__ = [
    "VarifuseError", "GeometryError", "FormatError", "UnsupportedFormatError",
    "DomainError", "OperatorError", "ConfigError", "SubspaceError", "PluginError",
    "RasterImage", "BandMatrix", "create_raster", "read_raster", "write_raster", "import_pgm",
    "Geometry", "LinearOperator", "Identity", "GaussianBlur", "BlockMean", "MaskOperator",
    "GainOperator", "SpectralResponseOperator", "CompositeOperator", "gaussian_kernel",
    "apply_affine_degradation", "NoiseSpec", "add_noise", "gamma_neglog_likelihood",
    "load_spectral_response",
    "ExternalDenoiser", "pack_frame", "unpack_header",
    "TVPrior", "LaplacianQuadraticPrior", "L1SynthesisPrior", "MedianPrior", "NLMPrior",
    "ExternalPrior", "PriorHandle", "denoise", "soft_threshold", "tv_prox", "tv_value",
    "ista_sparse_code", "laplacian_apply",
    "QuadraticFidelity", "GammaFidelity", "SmoothedTVTerm", "LaplacianQuadraticTerm",
    "ProblemSpec", "SolverConfig", "SolverReport", "gradient_descent", "conjugate_gradient",
    "hqs_solve", "admm_solve", "finite_difference_gradient_check", "energy_of", "gradient_of",
    "DespeckleConfig", "HsiDenoiseConfig", "FusionInputs", "despeckle_pnp", "despeckle_aa_tv",
    "hsi_denoise_pnp", "fuse_dlvm", "fuse_cnnfus", "gradient_priors_from_highres",
    "estimate_spectral_basis", "evaluate_model_loss",
    "MetricReport", "psnr", "ssim", "msa", "enl", "evaluate_pair",
]
