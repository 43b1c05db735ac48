/** Binary PPM (P6) codec. The frame service speaks nothing else, so a full
 * image library would be dead weight; the format is a four-token ASCII header
 * followed by raw RGB bytes. */

export interface RasterImage {
  width: number;
  height: number;
  /** RGB, row-major, 3 bytes per pixel. */
  pixels: Uint8Array;
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d || b === 0x0b || b === 0x0c;
}

export function decodePPM(bytes: Uint8Array): RasterImage {
  let pos = 0;
  // Header tokens are whitespace-separated; '#' starts a comment to end of line.
  const token = (): string => {
    for (;;) {
      while (pos < bytes.length && isSpace(bytes[pos])) pos++;
      if (pos < bytes.length && bytes[pos] === 0x23) {
        while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    if (pos === start) throw new Error("truncated PPM header");
    return String.fromCharCode(...bytes.subarray(start, pos));
  };

  const magic = token();
  if (magic !== "P6") throw new Error(`not a binary PPM (magic "${magic}")`);
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0) || !(height > 0)) throw new Error("bad PPM dimensions");
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  pos++; // exactly one whitespace byte separates the header from the data
  const n = width * height * 3;
  if (bytes.length - pos < n) {
    throw new Error(`truncated PPM data: need ${n} bytes, have ${bytes.length - pos}`);
  }
  return { width, height, pixels: bytes.slice(pos, pos + n) };
}

export function encodePPM(image: RasterImage): Uint8Array {
  const header = `P6\n${image.width} ${image.height}\n255\n`;
  const out = new Uint8Array(header.length + image.pixels.length);
  for (let i = 0; i < header.length; i++) out[i] = header.charCodeAt(i);
  out.set(image.pixels, header.length);
  return out;
}

/** Expand packed RGB to RGBA with opaque alpha, as ImageData wants. The
 * return type is inferred so the ArrayBuffer backing survives into the
 * ImageData constructor's signature. */
export function toRGBA(image: RasterImage) {
  const n = image.width * image.height;
  const out = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    out[i * 4] = image.pixels[i * 3];
    out[i * 4 + 1] = image.pixels[i * 3 + 1];
    out[i * 4 + 2] = image.pixels[i * 3 + 2];
    out[i * 4 + 3] = 255;
  }
  return out;
}
