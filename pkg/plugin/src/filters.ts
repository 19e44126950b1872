/**
 * Separable Gaussian smoothing used by the "smooth" mode.  The kernel
 * standard deviation equals the sigma received in the frame header,
 * with symmetric (half-sample reflected) boundary handling, so the
 * smoothing strength tracks the host's noise estimate one-to-one.
 */

/**
 * Sampled Gaussian kernel, radius ceil(3*sigma), renormalized to sum
 * exactly to one.  sigma = 0 degenerates to the identity kernel.
 */
export function gaussianKernel(sigma: number): Float64Array {
  if (!(sigma >= 0) || !Number.isFinite(sigma)) {
    throw new RangeError(`kernel sigma must be finite and >= 0, got ${sigma}`);
  }
  if (sigma === 0) return Float64Array.of(1);
  const radius = Math.ceil(3 * sigma);
  const kernel = new Float64Array(2 * radius + 1);
  let total = 0;
  for (let i = -radius; i <= radius; i++) {
    const w = Math.exp(-(i * i) / (2 * sigma * sigma));
    kernel[i + radius] = w;
    total += w;
  }
  for (let i = 0; i < kernel.length; i++) kernel[i]! /= total;
  return kernel;
}

/** Reflect an out-of-range index into [0, n) across the half-sample edge. */
function reflect(i: number, n: number): number {
  if (n === 1) return 0;
  const period = 2 * n;
  let j = ((i % period) + period) % period;
  if (j >= n) j = period - 1 - j;
  return j;
}

function convolveRows(
  src: Float64Array,
  dst: Float64Array,
  width: number,
  height: number,
  kernel: Float64Array,
): void {
  const radius = (kernel.length - 1) / 2;
  for (let r = 0; r < height; r++) {
    const base = r * width;
    for (let c = 0; c < width; c++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        acc += kernel[k + radius]! * src[base + reflect(c + k, width)]!;
      }
      dst[base + c] = acc;
    }
  }
}

function convolveCols(
  src: Float64Array,
  dst: Float64Array,
  width: number,
  height: number,
  kernel: Float64Array,
): void {
  const radius = (kernel.length - 1) / 2;
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      let acc = 0;
      for (let k = -radius; k <= radius; k++) {
        acc += kernel[k + radius]! * src[reflect(r + k, height) * width + c]!;
      }
      dst[r * width + c] = acc;
    }
  }
}

/** Smooth one band in place-free fashion; returns a new array. */
export function smoothBand(
  band: Float64Array,
  width: number,
  height: number,
  sigma: number,
): Float64Array {
  if (band.length !== width * height) {
    throw new RangeError(
      `band length ${band.length} does not match ${width}x${height}`,
    );
  }
  const kernel = gaussianKernel(sigma);
  if (kernel.length === 1) return Float64Array.from(band);
  const tmp = new Float64Array(band.length);
  const out = new Float64Array(band.length);
  convolveRows(band, tmp, width, height, kernel);
  convolveCols(tmp, out, width, height, kernel);
  return out;
}
