/**
 * Minimal PNG decoder for the bundle maps: grayscale or RGB, 8- or 16-bit,
 * non-interlaced. Keeps the full 16-bit precision that a canvas-based decode
 * would lose. The zlib inflate step is injected so the same code runs in the
 * browser (DecompressionStream) and under node (node:zlib) for tests.
 */

export type Inflate = (data: Uint8Array) => Promise<Uint8Array>;

export interface DecodedImage {
  width: number;
  height: number;
  channels: number; // 1 or 3
  /** Channel-interleaved values scaled to [0, 1]. */
  data: Float32Array;
}

const PNG_SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

export async function decodePng(bytes: Uint8Array, inflate: Inflate): Promise<DecodedImage> {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== PNG_SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Uint8Array[] = [];
  while (pos < bytes.length) {
    const length = view.getUint32(pos);
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const start = pos + 8;
    if (type === "IHDR") {
      width = view.getUint32(start);
      height = view.getUint32(start + 4);
      bitDepth = bytes[start + 8];
      colorType = bytes[start + 9];
      if (bytes[start + 12] !== 0) throw new Error("interlaced PNG is not supported");
      if (colorType !== 0 && colorType !== 2) {
        throw new Error(`unsupported PNG color type ${colorType}`);
      }
      if (bitDepth !== 8 && bitDepth !== 16) {
        throw new Error(`unsupported PNG bit depth ${bitDepth}`);
      }
    } else if (type === "IDAT") {
      idat.push(bytes.subarray(start, start + length));
    } else if (type === "IEND") {
      break;
    }
    pos = start + length + 4; // skip CRC
  }
  if (!width || !height) throw new Error("PNG has no IHDR");

  const compressed = concat(idat);
  const raw = await inflate(compressed);
  const channels = colorType === 2 ? 3 : 1;
  const sampleBytes = bitDepth / 8;
  const pixelBytes = channels * sampleBytes;
  const rowBytes = width * pixelBytes;
  if (raw.length < height * (rowBytes + 1)) throw new Error("PNG data is truncated");

  const unfiltered = unfilter(raw, height, rowBytes, pixelBytes);
  const data = new Float32Array(width * height * channels);
  const maxValue = bitDepth === 16 ? 65535 : 255;
  let src = 0;
  for (let i = 0; i < width * height * channels; i++) {
    const value =
      bitDepth === 16 ? (unfiltered[src] << 8) | unfiltered[src + 1] : unfiltered[src];
    data[i] = value / maxValue;
    src += sampleBytes;
  }
  return { width, height, channels, data };
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

function unfilter(raw: Uint8Array, height: number, rowBytes: number, pixelBytes: number): Uint8Array {
  const out = new Uint8Array(height * rowBytes);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (rowBytes + 1)];
    const srcRow = y * (rowBytes + 1) + 1;
    const dstRow = y * rowBytes;
    for (let x = 0; x < rowBytes; x++) {
      const value = raw[srcRow + x];
      const left = x >= pixelBytes ? out[dstRow + x - pixelBytes] : 0;
      const up = y > 0 ? out[dstRow - rowBytes + x] : 0;
      const upLeft = y > 0 && x >= pixelBytes ? out[dstRow - rowBytes + x - pixelBytes] : 0;
      let recon: number;
      switch (filter) {
        case 0:
          recon = value;
          break;
        case 1:
          recon = value + left;
          break;
        case 2:
          recon = value + up;
          break;
        case 3:
          recon = value + ((left + up) >> 1);
          break;
        case 4:
          recon = value + paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`unknown PNG filter ${filter}`);
      }
      out[dstRow + x] = recon & 0xff;
    }
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

/** Browser inflate via DecompressionStream('deflate') — zlib-wrapped data. */
export async function browserInflate(data: Uint8Array): Promise<Uint8Array> {
  const ds = new DecompressionStream("deflate");
  const stream = new Blob([data as BlobPart]).stream().pipeThrough(ds);
  const buffer = await new Response(stream).arrayBuffer();
  return new Uint8Array(buffer);
}
