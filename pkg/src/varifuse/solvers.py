"""Energy assembly and the four solver loops.

A :class:`ProblemSpec` is a fidelity term plus weighted regularizers. The
smooth pieces expose exact analytic energies/gradients (verified against
central differences by :func:`finite_difference_gradient_check`); the
nonsmooth or implicit pieces participate through the splitting solvers,
which fix the splitting X = V (multiplier update W <- W + X - V).

Splitting convention: the quadratic coupling is written rho * ||X - V + W||^2
(no 1/2), so the V-subproblem is exactly the proximal map of the V-bound
regularizer at scale lam / (2 rho), and the denoiser is invoked with noise
level sigma_t = sqrt(lam / (2 rho_t)). The ``noise_arg`` switch forwards
sigma_t squared instead for denoisers calibrated on variance. rho escalates
by ``rho_gamma`` per outer iteration, capped at 1e6 times its start value.

Masked-out pixels of an observation are excluded from both fidelity
energies and their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import ndimage

from . import _diff
from .errors import ConfigError, DomainError, OperatorError
from .operators import LinearOperator
from .priors import (
    L1SynthesisPrior,
    PriorHandle,
    TVPrior,
    _LAP_STENCIL,
    denoise,
    tv_value,
)
from .raster import RasterImage

__all__ = [
    "QuadraticFidelity",
    "GammaFidelity",
    "SmoothedTVTerm",
    "LaplacianQuadraticTerm",
    "ProblemSpec",
    "SolverConfig",
    "SolverReport",
    "energy_of",
    "gradient_of",
    "gradient_descent",
    "conjugate_gradient",
    "hqs_solve",
    "admm_solve",
    "finite_difference_gradient_check",
]


# -- problem terms ----------------------------------------------------------


@dataclass(frozen=True)
class QuadraticFidelity:
    """(weight / 2) * ||A x - y||^2 over valid pixels of y."""

    operator: LinearOperator
    observation: RasterImage
    weight: float = 1.0

    def _mask(self):
        m = self.observation.mask
        return None if m is None else m.astype(np.float64)

    def energy(self, a: np.ndarray) -> float:
        r = self.operator._forward(a) - self.observation.data
        m = self._mask()
        if m is not None:
            r = r * m
        return 0.5 * self.weight * float((r * r).sum())

    def gradient(self, a: np.ndarray) -> np.ndarray:
        r = self.operator._forward(a) - self.observation.data
        m = self._mask()
        if m is not None:
            r = r * m
        return self.weight * self.operator._backward(r)


@dataclass(frozen=True)
class GammaFidelity:
    """weight * sum(log x + y / x): the multiplicative-speckle fidelity."""

    observation: RasterImage
    weight: float = 1.0

    def energy(self, a: np.ndarray) -> float:
        if np.any(a <= 0):
            raise DomainError("gamma fidelity is defined for strictly positive x")
        y = self.observation.data
        t = np.log(a) + y / a
        if self.observation.mask is not None:
            t = t * self.observation.mask
        return self.weight * float(t.sum())

    def gradient(self, a: np.ndarray) -> np.ndarray:
        if np.any(a <= 0):
            raise DomainError("gamma fidelity is defined for strictly positive x")
        y = self.observation.data
        g = 1.0 / a - y / (a * a)
        if self.observation.mask is not None:
            g = g * self.observation.mask
        return self.weight * g


@dataclass(frozen=True)
class SmoothedTVTerm:
    """sum sqrt(|grad|^2 + epsilon^2), the differentiable TV surrogate."""

    epsilon: float = 1e-3

    def energy(self, a: np.ndarray) -> float:
        return _diff.smoothed_tv(a, self.epsilon)[0]

    def gradient(self, a: np.ndarray) -> np.ndarray:
        return _diff.smoothed_tv(a, self.epsilon)[1]


@dataclass(frozen=True)
class LaplacianQuadraticTerm:
    """0.5 * ||Q x||^2 with Q the five-point Laplacian."""

    def energy(self, a: np.ndarray) -> float:
        q = ndimage.correlate(a, _LAP_STENCIL, mode="reflect")
        return 0.5 * float((q * q).sum())

    def gradient(self, a: np.ndarray) -> np.ndarray:
        q = ndimage.correlate(a, _LAP_STENCIL, mode="reflect")
        return ndimage.correlate(q, _LAP_STENCIL, mode="reflect")


@dataclass(frozen=True)
class ProblemSpec:
    """fidelity + sum_i weight_i * regularizer_i, with one term bindable to V."""

    fidelity: QuadraticFidelity | GammaFidelity
    regularizers: tuple = ()
    v_index: int = 0

    def __post_init__(self):
        regs = tuple(self.regularizers)
        object.__setattr__(self, "regularizers", regs)
        if regs and not (0 <= self.v_index < len(regs)):
            raise ConfigError(f"v_index {self.v_index} outside regularizer list of length {len(regs)}")


def _is_explicit(term) -> bool:
    return hasattr(term, "energy") and hasattr(term, "gradient")


def _energy(spec: ProblemSpec, a: np.ndarray) -> float:
    total = spec.fidelity.energy(a)
    for term, weight in spec.regularizers:
        if not _is_explicit(term):
            raise ConfigError(
                f"{type(term).__name__} has no explicit energy; use a splitting solver"
            )
        total += weight * term.energy(a)
    return total


def _gradient(spec: ProblemSpec, a: np.ndarray) -> np.ndarray:
    g = spec.fidelity.gradient(a)
    for term, weight in spec.regularizers:
        if not _is_explicit(term):
            raise ConfigError(
                f"{type(term).__name__} has no explicit gradient; use a splitting solver"
            )
        g = g + weight * term.gradient(a)
    return g


def energy_of(spec: ProblemSpec, img: RasterImage) -> float:
    return _energy(spec, img.data)


def gradient_of(spec: ProblemSpec, img: RasterImage) -> RasterImage:
    return RasterImage(_gradient(spec, img.data))


# -- configuration and reporting ---------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50
    tol: float = 1e-4
    step_size: float = 1e-3
    rho0: float = 1.0
    rho_gamma: float = 1.2
    cg_max_iters: int = 200
    cg_tol: float = 1e-8
    noise_arg: Literal["std", "var"] = "std"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0 or self.cg_tol < 0:
            raise ConfigError("tolerances must be >= 0")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.rho0 <= 0 or self.rho_gamma < 1.0:
            raise ConfigError("rho0 must be positive and rho_gamma >= 1")
        if self.noise_arg not in ("std", "var"):
            raise ConfigError(f"noise_arg must be 'std' or 'var', got {self.noise_arg!r}")


_RHO_CAP_FACTOR = 1e6


@dataclass
class SolverReport:
    """Per-run trace: what ran, how it stopped, what it recorded."""

    iterations: int = 0
    stop_reason: str = "max-iterations"
    energy: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    aux: dict = field(default_factory=dict)


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12))


# -- gradient descent ---------------------------------------------------------


def gradient_descent(
    spec: ProblemSpec,
    x0: RasterImage,
    cfg: SolverConfig,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[RasterImage, SolverReport]:
    """Fixed-step descent on the explicit energy, with a divergence guard.

    ``project`` (optional) is applied after every step, e.g. a positivity
    clamp. The run stops with reason 'diverged' once the energy has grown
    for five consecutive iterations.
    """
    a = x0.data.copy()
    report = SolverReport()
    prev_energy = _energy(spec, a)
    report.energy.append(prev_energy)
    growth_streak = 0
    for it in range(1, cfg.max_iters + 1):
        new = a - cfg.step_size * _gradient(spec, a)
        if project is not None:
            new = project(new)
        report.iterations = it
        if not np.all(np.isfinite(new)):
            report.stop_reason = "diverged"
            break
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                e = _energy(spec, new)
            except DomainError:
                e = float("inf")
        report.energy.append(e)
        change = _rel_change(new, a)
        a = new
        # strict growth only; float-level oscillation near a minimum is not
        # divergence
        grew = e > prev_energy + 1e-12 * max(1.0, abs(prev_energy))
        growth_streak = growth_streak + 1 if grew else 0
        prev_energy = e
        if growth_streak >= 5:
            report.stop_reason = "diverged"
            break
        if change < cfg.tol:
            report.stop_reason = "tolerance"
            break
    return x0.with_data(a), report


# -- conjugate gradient --------------------------------------------------------


def _symmetry_probe(apply_A, shape, tol: float = 1e-8):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(0xC6)))
    for _ in range(2):
        x = RasterImage(rng.standard_normal(shape))
        y = RasterImage(rng.standard_normal(shape))
        ax = apply_A(x).data
        ay = apply_A(y).data
        lhs = float((ax * y.data).sum())
        rhs = float((x.data * ay).sum())
        scale = np.linalg.norm(ax) * np.linalg.norm(y.data) \
            + np.linalg.norm(x.data) * np.linalg.norm(ay) + 1e-300
        if abs(lhs - rhs) > tol * scale:
            raise OperatorError(
                f"operator failed the symmetry probe: <Ax,y>={lhs!r} vs <x,Ay>={rhs!r}"
            )


def conjugate_gradient(
    apply_A: Callable[[RasterImage], RasterImage],
    b: RasterImage,
    x0: RasterImage | None = None,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[RasterImage, SolverReport]:
    """Matrix-free CG for SPD operators on rasters.

    The operator is probed for symmetry before iterating; drift beyond
    1e-8 (relative) raises OperatorError. The residual trace is relative
    to ||b||.
    """
    _symmetry_probe(apply_A, b.data.shape)
    report = SolverReport()
    bnorm = float(np.linalg.norm(b.data))
    if bnorm == 0.0:
        report.stop_reason = "tolerance"
        return b.with_data(np.zeros_like(b.data)), report
    x = np.zeros_like(b.data) if x0 is None else x0.data.copy()
    r = b.data - apply_A(RasterImage(x)).data
    p = r.copy()
    rs = float((r * r).sum())
    report.residuals.append(np.sqrt(rs) / bnorm)
    for it in range(1, cfg.cg_max_iters + 1):
        if np.sqrt(rs) / bnorm <= cfg.cg_tol:
            report.stop_reason = "tolerance"
            break
        ap = apply_A(RasterImage(p)).data
        pap = float((p * ap).sum())
        if pap <= 0.0:
            # Stagnation: the operator is singular along p (or numerically so).
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float((r * r).sum())
        p = r + (rs_new / rs) * p
        rs = rs_new
        report.iterations = it
        report.residuals.append(np.sqrt(rs) / bnorm)
    else:
        if np.sqrt(rs) / bnorm <= cfg.cg_tol:
            report.stop_reason = "tolerance"
    return b.with_data(x), report


# -- splitting solvers ----------------------------------------------------------


def _v_bound(spec: ProblemSpec):
    if len(spec.regularizers) != 1:
        raise ConfigError(
            f"splitting solvers need exactly one regularizer bound to V, got {len(spec.regularizers)}"
        )
    return spec.regularizers[spec.v_index]


def _full_energy_term(term, weight: float):
    """Closed-form value of the V-bound regularizer, when one exists."""
    if isinstance(term, TVPrior):
        return lambda a: weight * tv_value(a) * term.scale
    if isinstance(term, L1SynthesisPrior) and term.dictionary is None:
        return lambda a: weight * float(np.abs(a).sum())
    if _is_explicit(term):
        return lambda a: weight * term.energy(a)
    return None


def _quadratic_x_update(fid: QuadraticFidelity, target: np.ndarray, rho: float,
                        x_prev: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    m = fid._mask()

    def normal_op(z: RasterImage) -> RasterImage:
        r = fid.operator._forward(z.data)
        if m is not None:
            r = r * m
        return RasterImage(fid.weight * fid.operator._backward(r) + 2.0 * rho * z.data)

    y = fid.observation.data if m is None else fid.observation.data * m
    rhs = RasterImage(fid.weight * fid.operator._backward(y) + 2.0 * rho * target)
    out, _ = conjugate_gradient(normal_op, rhs, x0=RasterImage(x_prev), cfg=cfg)
    return out.data


def _splitting_loop(
    spec: ProblemSpec,
    x0: RasterImage,
    cfg: SolverConfig,
    prior: PriorHandle,
    x_update,
    use_multiplier: bool,
) -> tuple[RasterImage, SolverReport]:
    term, lam = _v_bound(spec)
    if x_update is None:
        if isinstance(spec.fidelity, GammaFidelity):
            raise ConfigError(
                "gamma fidelity has no closed-form quadratic X-step; pass the "
                "pointwise stationarity solver from the task layer as x_update"
            )

        def x_update(target, rho, x_prev):
            return _quadratic_x_update(spec.fidelity, target, rho, x_prev, cfg)

    energy_fn = _full_energy_term(term, lam)
    report = SolverReport(aux={"energy_is_full": energy_fn is not None, "rho": []})
    x = x0.data.copy()
    v = x.copy()
    w = np.zeros_like(x)
    rho = cfg.rho0
    rho_cap = cfg.rho0 * _RHO_CAP_FACTOR
    for it in range(1, cfg.max_iters + 1):
        x_prev = x
        x = x_update(v - w, rho, x_prev)
        sigma = np.sqrt(lam / (2.0 * rho))
        arg = sigma if cfg.noise_arg == "std" else sigma * sigma
        v_prev = v
        v = denoise(prior, RasterImage(x + w), arg).data
        primal = float(np.linalg.norm(x - v))
        if use_multiplier:
            w = w + x - v
            report.primal_residuals.append(primal)
            report.dual_residuals.append(2.0 * rho * float(np.linalg.norm(v - v_prev)))
        e = spec.fidelity.energy(x)
        if energy_fn is not None:
            e += energy_fn(x)
        report.energy.append(e)
        report.aux["rho"].append(rho)
        report.iterations = it
        rho = min(rho * cfg.rho_gamma, rho_cap)
        # The X change alone is blind to V and W still moving (the very first
        # X-step reproduces x0 exactly when v0 = x0), so the stop rule watches
        # the whole splitting state.
        settled = max(_rel_change(x, x_prev), _rel_change(v, v_prev)) < cfg.tol
        if use_multiplier:
            settled = settled and primal <= cfg.tol * max(float(np.linalg.norm(x)), 1e-12)
        if settled:
            report.stop_reason = "tolerance"
            break
    return x0.with_data(x), report


def hqs_solve(
    spec: ProblemSpec,
    x0: RasterImage,
    cfg: SolverConfig,
    prior: PriorHandle,
    x_update=None,
) -> tuple[RasterImage, SolverReport]:
    """Half-quadratic splitting: alternate the X and V subproblems.

    The X-update minimizes fidelity + rho ||x - v||^2 (conjugate gradient
    for quadratic fidelity, or the supplied ``x_update(target, rho, x_prev)``
    closure); the V-update is one denoiser call at sigma_t = sqrt(lam/(2 rho_t)).
    """
    return _splitting_loop(spec, x0, cfg, prior, x_update, use_multiplier=False)


def admm_solve(
    spec: ProblemSpec,
    x0: RasterImage,
    cfg: SolverConfig,
    prior: PriorHandle,
    x_update=None,
) -> tuple[RasterImage, SolverReport]:
    """ADMM with scaled multiplier on the X = V splitting.

    Identical subproblems to HQS plus the multiplier update W <- W + X - V;
    the report carries primal and dual residual traces.
    """
    return _splitting_loop(spec, x0, cfg, prior, x_update, use_multiplier=True)


# -- derivative verification -----------------------------------------------------


def finite_difference_gradient_check(
    spec: ProblemSpec,
    x: RasterImage,
    h: float = 1e-5,
    coords: int = 32,
    seed: int = 0,
) -> float:
    """Max relative gap between analytic and central-difference gradients.

    At least 32 coordinates are probed (all of them on small rasters). The
    caller chooses an ``x`` at which every term is differentiable and a
    step ``h`` keeping ``x +- h`` inside the domain.
    """
    a = x.data
    an = _gradient(spec, a)
    n = a.size
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    count = min(n, max(32, coords))
    idx = rng.choice(n, size=count, replace=False)
    worst = 0.0
    flat = a.ravel()
    for i in idx:
        step = np.zeros(n)
        step[i] = h
        ap = (flat + step).reshape(a.shape)
        am = (flat - step).reshape(a.shape)
        fd = (_energy(spec, ap) - _energy(spec, am)) / (2.0 * h)
        ref = an.ravel()[i]
        rel = abs(fd - ref) / max(abs(ref), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst
