/**
 * Reference external denoiser for the varifuse plug-and-play solvers.
 *
 * Speaks the framed stdio protocol: each request frame carries an image
 * cube and a noise level, each response echoes the geometry with the
 * processed samples.  Runs strictly sequentially until the host closes
 * stdin.  All diagnostics go to stderr; stdout carries protocol bytes
 * and nothing else.
 *
 *   node dist/main.js --mode identity   # echo samples unchanged
 *   node dist/main.js --mode smooth     # Gaussian, kernel std = sigma
 */

import { parseArgs } from "node:util";
import { smoothBand } from "./filters.js";
import {
  Frame,
  ProtocolError,
  StreamReader,
  readFrame,
  writeFrame,
} from "./protocol.js";

const MODES = ["identity", "smooth"] as const;
type Mode = (typeof MODES)[number];

function processFrame(frame: Frame, mode: Mode): Buffer {
  if (mode === "identity") return frame.payload;
  const { width, height, bands, sigma } = frame.header;
  const pixels = width * height;
  const out = Buffer.alloc(frame.payload.length);
  for (let b = 0; b < bands; b++) {
    const offset = b * pixels * 4;
    const band = new Float64Array(pixels);
    for (let i = 0; i < pixels; i++) {
      band[i] = frame.payload.readFloatLE(offset + 4 * i);
    }
    const smoothed = smoothBand(band, width, height, sigma);
    for (let i = 0; i < pixels; i++) {
      out.writeFloatLE(smoothed[i]!, offset + 4 * i);
    }
  }
  return out;
}

async function serve(mode: Mode): Promise<void> {
  const reader = new StreamReader(process.stdin);
  for (;;) {
    const frame = await readFrame(reader);
    if (frame === null) return;
    await writeFrame(process.stdout, frame.header, processFrame(frame, mode));
  }
}

function parseMode(argv: string[]): Mode {
  const { values } = parseArgs({
    args: argv,
    options: { mode: { type: "string", default: "identity" } },
  });
  const mode = values.mode as string;
  if (!(MODES as readonly string[]).includes(mode)) {
    throw new RangeError(`unknown mode "${mode}" (expected identity|smooth)`);
  }
  return mode as Mode;
}

async function main(): Promise<void> {
  let mode: Mode;
  try {
    mode = parseMode(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(`usage: main.js [--mode identity|smooth]\n`);
    process.stderr.write(`${err instanceof Error ? err.message : err}\n`);
    process.exit(2);
  }
  try {
    await serve(mode);
  } catch (err) {
    if (err instanceof ProtocolError) {
      process.stderr.write(`protocol error: ${err.message}\n`);
    } else {
      process.stderr.write(`internal error: ${String(err)}\n`);
    }
    process.exit(1);
  }
}

void main();
