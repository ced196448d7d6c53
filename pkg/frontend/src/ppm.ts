/** Decoder for the binary PPM (P6) images the synthetic generator writes. */

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA, ready for canvas ImageData */
  rgba: Uint8ClampedArray;
}

export function decodePpm(buffer: ArrayBuffer): DecodedImage {
  const bytes = new Uint8Array(buffer);
  if (bytes[0] !== 0x50 || bytes[1] !== 0x36) {
    throw new Error("not a binary PPM (P6) file");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < bytes.length && isSpace(bytes[pos])) pos++;
    if (bytes[pos] === 0x23) { // '#' comment to end of line
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) {
      value = value * 10 + (bytes[pos] - 0x30);
      pos++;
    }
    if (pos === start) throw new Error("malformed PPM header");
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported PPM maxval ${maxval}`);
  const n = width * height;
  if (bytes.length < pos + n * 3) throw new Error("PPM pixel data truncated");
  const rgba = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    rgba[i * 4] = bytes[pos + i * 3];
    rgba[i * 4 + 1] = bytes[pos + i * 3 + 1];
    rgba[i * 4 + 2] = bytes[pos + i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  return { width, height, rgba };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
