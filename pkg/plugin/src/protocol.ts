/**
 * Framed stdio protocol shared with the host solver.
 *
 * Every message, in either direction, is one frame:
 *
 *   bytes 0..3   magic "PNP1"
 *   bytes 4..7   u32 little-endian header length H
 *   bytes 8..8+H UTF-8 JSON header {width, height, bands, sigma}
 *   then         width*height*bands float32 little-endian samples,
 *                band-sequential (band, row, column)
 *
 * The stream is strictly sequential: one request, one response, no
 * interleaving.  End of input between frames is a normal shutdown;
 * end of input inside a frame is a protocol violation.
 */

export const MAGIC = Buffer.from("PNP1", "ascii");

/** Upper bound on the JSON header; anything larger is a corrupt length field. */
const MAX_HEADER_BYTES = 1 << 20;

export interface FrameHeader {
  width: number;
  height: number;
  bands: number;
  sigma: number;
}

export interface Frame {
  header: FrameHeader;
  /** Raw float32 little-endian payload, length = width*height*bands*4. */
  payload: Buffer;
}

/** Raised on any malformed or truncated frame. */
export class ProtocolError extends Error {}

/**
 * Pull-based reader over a byte stream.  readExact() resolves once the
 * requested count is buffered, with null reserved for a clean end of
 * stream before the first byte of the request.
 */
export class StreamReader {
  private chunks: Buffer[] = [];
  private buffered = 0;
  private ended = false;
  private wake: (() => void) | null = null;

  constructor(stream: NodeJS.ReadableStream) {
    stream.on("data", (chunk: Buffer) => {
      this.chunks.push(chunk);
      this.buffered += chunk.length;
      this.wake?.();
    });
    stream.on("end", () => {
      this.ended = true;
      this.wake?.();
    });
    stream.on("error", () => {
      // Treat a broken pipe like end of stream; the frame loop decides
      // whether the position makes it clean or truncated.
      this.ended = true;
      this.wake?.();
    });
  }

  async readExact(count: number): Promise<Buffer | null> {
    while (this.buffered < count) {
      if (this.ended) {
        if (this.buffered === 0) return null;
        throw new ProtocolError(
          `stream truncated: needed ${count} bytes, got ${this.buffered}`,
        );
      }
      await new Promise<void>((resolve) => {
        this.wake = resolve;
      });
      this.wake = null;
    }
    const out = Buffer.concat(this.chunks, this.buffered).subarray(0, count);
    const rest = Buffer.concat(this.chunks, this.buffered).subarray(count);
    this.chunks = rest.length > 0 ? [Buffer.from(rest)] : [];
    this.buffered = rest.length;
    return Buffer.from(out);
  }
}

function asPositiveInt(value: unknown, name: string): number {
  if (typeof value !== "number" || !Number.isSafeInteger(value) || value <= 0) {
    throw new ProtocolError(`header field ${name} must be a positive integer`);
  }
  return value;
}

export function parseHeader(raw: Buffer): FrameHeader {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw.toString("utf-8"));
  } catch (err) {
    throw new ProtocolError(`header is not valid JSON: ${String(err)}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new ProtocolError("header must be a JSON object");
  }
  const rec = parsed as Record<string, unknown>;
  const width = asPositiveInt(rec.width, "width");
  const height = asPositiveInt(rec.height, "height");
  const bands = asPositiveInt(rec.bands, "bands");
  const sigma = rec.sigma;
  if (typeof sigma !== "number" || !Number.isFinite(sigma) || sigma < 0) {
    throw new ProtocolError("header field sigma must be a finite number >= 0");
  }
  return { width, height, bands, sigma };
}

/**
 * Read one frame.  Returns null only on a clean end of stream at a
 * frame boundary; every other irregularity throws ProtocolError.
 */
export async function readFrame(reader: StreamReader): Promise<Frame | null> {
  const head = await reader.readExact(8);
  if (head === null) return null;
  if (!head.subarray(0, 4).equals(MAGIC)) {
    throw new ProtocolError(
      `bad magic: expected "PNP1", got ${JSON.stringify(head.subarray(0, 4).toString("latin1"))}`,
    );
  }
  const headerLen = head.readUInt32LE(4);
  if (headerLen === 0 || headerLen > MAX_HEADER_BYTES) {
    throw new ProtocolError(`implausible header length ${headerLen}`);
  }
  const headerBuf = await reader.readExact(headerLen);
  if (headerBuf === null) {
    throw new ProtocolError("stream truncated inside frame header");
  }
  const header = parseHeader(headerBuf);
  const payloadBytes = header.width * header.height * header.bands * 4;
  const payload = await reader.readExact(payloadBytes);
  if (payload === null) {
    throw new ProtocolError("stream truncated before frame payload");
  }
  return { header, payload };
}

/** Serialize one frame; the sorted key order matches the host's encoder. */
export function packFrame(header: FrameHeader, payload: Buffer): Buffer {
  const json = JSON.stringify({
    bands: header.bands,
    height: header.height,
    sigma: header.sigma,
    width: header.width,
  });
  const headerBuf = Buffer.from(json, "utf-8");
  const prefix = Buffer.alloc(8);
  MAGIC.copy(prefix, 0);
  prefix.writeUInt32LE(headerBuf.length, 4);
  return Buffer.concat([prefix, headerBuf, payload]);
}

/** Write a frame and respect backpressure so each response is flushed. */
export function writeFrame(
  stream: NodeJS.WritableStream,
  header: FrameHeader,
  payload: Buffer,
): Promise<void> {
  return new Promise((resolve, reject) => {
    stream.write(packFrame(header, payload), (err) =>
      err ? reject(err) : resolve(),
    );
  });
}
