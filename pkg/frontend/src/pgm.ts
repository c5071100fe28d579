/** Binary PGM (P5) decoder: the service sends thumbnails as the stored
 * raster, so the client rasterizes them onto a canvas itself. */

export interface PgmImage {
  width: number;
  height: number;
  maxval: number;
  pixels: Uint8Array;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

export function parsePgm(data: Uint8Array): PgmImage {
  let offset = 0;

  function nextToken(): string {
    while (offset < data.length) {
      if (WHITESPACE.has(data[offset])) {
        offset += 1;
      } else if (data[offset] === 0x23) { // '#' comment to end of line
        while (offset < data.length && data[offset] !== 0x0a) {
          offset += 1;
        }
      } else {
        break;
      }
    }
    const start = offset;
    while (offset < data.length && !WHITESPACE.has(data[offset])) {
      offset += 1;
    }
    if (start === offset) {
      throw new Error("truncated PGM header");
    }
    return new TextDecoder("ascii").decode(data.subarray(start, offset));
  }

  const magic = nextToken();
  if (magic !== "P5") {
    throw new Error(`not a binary PGM (magic ${magic})`);
  }
  const width = parseInt(nextToken(), 10);
  const height = parseInt(nextToken(), 10);
  const maxval = parseInt(nextToken(), 10);
  if (!(width > 0 && height > 0 && maxval > 0 && maxval <= 255)) {
    throw new Error("bad PGM dimensions");
  }
  offset += 1; // single whitespace byte after maxval
  const expected = width * height;
  const pixels = data.subarray(offset, offset + expected);
  if (pixels.length !== expected) {
    throw new Error("truncated PGM pixel data");
  }
  return { width, height, maxval, pixels: new Uint8Array(pixels) };
}

/** Expand to RGBA for ImageData; ink (bright source values) paints dark so
 * figures read like line drawings on paper. */
export function pgmToRgba(img: PgmImage) {
  // explicit ArrayBuffer keeps the ImageData constructor happy under strict
  // DOM typings
  const out = new Uint8ClampedArray(new ArrayBuffer(img.width * img.height * 4));
  for (let i = 0; i < img.pixels.length; i++) {
    const value = 255 - Math.round((img.pixels[i] / img.maxval) * 255);
    out[i * 4] = value;
    out[i * 4 + 1] = value;
    out[i * 4 + 2] = value;
    out[i * 4 + 3] = 255;
  }
  return out;
}
