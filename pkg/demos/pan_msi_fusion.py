"""
Sharpening with transplanted gradients
======================================

A blurred, 4x-decimated multispectral observation is fused with spatial
detail expressed as gradient fields. With the true gradients the single
conjugate-gradient solve is essentially exact; with gradients transplanted
from the mean of a high-resolution companion the result is still far
sharper than replication upsampling — the transplant relies on the bands
sharing spatial geometry, which is why the scene below scales one
structure map into three bands.
"""

import numpy as np

from varifuse import (
    BlockMean,
    CompositeOperator,
    FusionInputs,
    GaussianBlur,
    Geometry,
    RasterImage,
    SolverConfig,
    fuse_dlvm,
    psnr,
)
from varifuse._diff import grad_x, grad_y

u, v = np.mgrid[0:32, 0:32] / 31.0
base = (0.5 + 0.3 * np.sin(2 * np.pi * (u + v))
        + np.where((u - 0.6) ** 2 + (v - 0.35) ** 2 < 0.04, 0.2, 0.0))
truth = RasterImage(np.stack([0.9 * base + 0.05, 0.6 * base + 0.2, 0.35 * base + 0.4]))

geom = Geometry(32, 32, 3)
h_op = CompositeOperator([GaussianBlur(geom, 1.0), BlockMean(geom, 4)])
y = RasterImage(h_op._forward(truth.data))

replicated = RasterImage(np.repeat(np.repeat(y.data, 4, axis=1), 4, axis=2))
print(f"replication upsampling : PSNR {psnr(truth, replicated, 1.0):6.2f} dB")

inputs = FusionInputs(y=y, z=truth, h_op=h_op, gamma=2.0, lam=0.01)
cfg = SolverConfig(cg_max_iters=600, cg_tol=1e-10)

# oracle detail: differentiate the reference itself
g1 = RasterImage(grad_x(truth.data))
g2 = RasterImage(grad_y(truth.data))
fused, report = fuse_dlvm(inputs, g1, g2, cfg)
print(f"true-gradient fusion   : PSNR {psnr(truth, fused, 1.0):6.2f} dB"
      f"   (CG residual {report.residuals[-1]:.1e})")

# practical detail: transplant the companion image's gradients band by band
fused, report = fuse_dlvm(inputs, cfg=cfg)
print(f"transplanted gradients : PSNR {psnr(truth, fused, 1.0):6.2f} dB"
      f"   (CG residual {report.residuals[-1]:.1e})")
