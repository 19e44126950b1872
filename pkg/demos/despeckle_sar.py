"""
Despeckling a single-look SAR intensity image
=============================================

Builds a cartoon reflectivity scene, multiplies it by unit-mean Gamma
speckle, and removes the speckle two ways: the plug-and-play loop with a
TV denoiser, and the classical variational descent on the log + ratio
fidelity. Prints PSNR against the clean scene and the equivalent number
of looks measured on a homogeneous block.
"""

import numpy as np

from varifuse import (
    DespeckleConfig,
    NoiseSpec,
    RasterImage,
    SolverConfig,
    TVPrior,
    add_noise,
    despeckle_aa_tv,
    despeckle_pnp,
    enl,
    psnr,
)

# a piecewise-constant scene: background, two rectangles, a disk, a bright block
scene = np.full((1, 128, 128), 0.45)
scene[:, 64:112, 16:72] = 0.9
yy, xx = np.mgrid[0:128, 0:128]
scene[:, (xx - 96) ** 2 + (yy - 40) ** 2 < 24 ** 2] = 0.65
scene[:, 100:124, 88:124] = 0.2
scene[:, 8:40, 8:40] = 1.0
clean = RasterImage(scene)

# single-look speckle is the hardest case: the noise std equals the signal
noisy = add_noise(clean, NoiseSpec("speckle", seed=42, looks=1))
block = (8, 8, 32, 32)  # inside the bright 1.0 square

print(f"noisy input    : PSNR {psnr(clean, noisy, 1.0):6.2f} dB   ENL {enl(noisy, block):6.1f}")

# plug-and-play: denoiser strength follows the escalating penalty
cfg = DespeckleConfig(
    lam=0.5,
    prior=TVPrior(iters=100),
    solver=SolverConfig(max_iters=40, rho0=0.5, rho_gamma=1.2, tol=1e-5),
)
restored, report = despeckle_pnp(noisy, cfg)
print(f"plug-and-play  : PSNR {psnr(clean, restored, 1.0):6.2f} dB   ENL {enl(restored, block):6.1f}"
      f"   ({report.iterations} iterations, worst cubic residual"
      f" {max(report.aux['cubic_residual_max']):.1e})")

# classical baseline: projected gradient descent on the smooth energy
baseline, ba_report = despeckle_aa_tv(
    noisy, 1.0, SolverConfig(max_iters=2000, step_size=5e-4, tol=1e-9), floor=0.1
)
print(f"variational TV : PSNR {psnr(clean, baseline, 1.0):6.2f} dB   ENL {enl(baseline, block):6.1f}"
      f"   (energy {ba_report.energy[0]:.1f} -> {ba_report.energy[-1]:.1f})")

# the same pipeline is scriptable:
#   varifuse degrade   --in clean.vcr --out noisy.vcr --noise speckle --looks 1 --seed 42
#   varifuse despeckle --in noisy.vcr --out restored.vcr --prior tv --lambda 0.5 \
#       --iters 40 --rho0 0.5
#   varifuse eval      --ref clean.vcr --test restored.vcr --region 8,8,32,32
