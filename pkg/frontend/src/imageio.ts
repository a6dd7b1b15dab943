import * as fs from "fs";
import { PNG } from "pngjs";

/** Planar RGB image with float channels in [0, 1]. */
export interface RgbImage {
  width: number;
  height: number;
  /** Row-major, interleaved r,g,b. */
  data: Float64Array;
}

export class ImageReadError extends Error {}

export function loadImage(path: string): RgbImage {
  let buf: Buffer;
  try {
    buf = fs.readFileSync(path);
  } catch (err) {
    throw new ImageReadError(`cannot read image file '${path}': ${err}`);
  }
  if (buf.length >= 8 && buf[0] === 0x89 && buf[1] === 0x50) {
    return decodePng(buf, path);
  }
  if (buf.length >= 2 && buf[0] === 0x50 && (buf[1] === 0x35 || buf[1] === 0x36)) {
    return decodePnm(buf, path);
  }
  throw new ImageReadError(`unsupported image format in '${path}' (PNG/PGM/PPM only)`);
}

function decodePng(buf: Buffer, path: string): RgbImage {
  let png: PNG;
  try {
    png = PNG.sync.read(buf);
  } catch (err) {
    throw new ImageReadError(`broken PNG '${path}': ${err}`);
  }
  const data = new Float64Array(png.width * png.height * 3);
  for (let k = 0; k < png.width * png.height; k++) {
    data[3 * k] = png.data[4 * k] / 255;
    data[3 * k + 1] = png.data[4 * k + 1] / 255;
    data[3 * k + 2] = png.data[4 * k + 2] / 255;
  }
  return { width: png.width, height: png.height, data };
}

/** Binary PGM (P5) / PPM (P6), maxval up to 255. */
function decodePnm(buf: Buffer, path: string): RgbImage {
  let pos = 0;
  const token = (): string => {
    while (pos < buf.length) {
      const c = buf[pos];
      if (c === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    return buf.toString("ascii", start, pos);
  };
  const magic = token();
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  pos++; // single whitespace after maxval
  if (!Number.isFinite(width) || !Number.isFinite(height) || maxval > 255) {
    throw new ImageReadError(`bad PNM header in '${path}'`);
  }
  const channels = magic === "P6" ? 3 : 1;
  const need = width * height * channels;
  if (buf.length - pos < need) {
    throw new ImageReadError(`truncated PNM data in '${path}'`);
  }
  const data = new Float64Array(width * height * 3);
  for (let k = 0; k < width * height; k++) {
    if (channels === 3) {
      data[3 * k] = buf[pos + 3 * k] / maxval;
      data[3 * k + 1] = buf[pos + 3 * k + 1] / maxval;
      data[3 * k + 2] = buf[pos + 3 * k + 2] / maxval;
    } else {
      const v = buf[pos + k] / maxval;
      data[3 * k] = v;
      data[3 * k + 1] = v;
      data[3 * k + 2] = v;
    }
  }
  return { width, height, data };
}

export function savePng(path: string, img: RgbImage): void {
  const png = new PNG({ width: img.width, height: img.height });
  for (let k = 0; k < img.width * img.height; k++) {
    png.data[4 * k] = Math.round(Math.min(1, Math.max(0, img.data[3 * k])) * 255);
    png.data[4 * k + 1] = Math.round(Math.min(1, Math.max(0, img.data[3 * k + 1])) * 255);
    png.data[4 * k + 2] = Math.round(Math.min(1, Math.max(0, img.data[3 * k + 2])) * 255);
    png.data[4 * k + 3] = 255;
  }
  fs.writeFileSync(path, PNG.sync.write(png));
}

export function luminance(img: RgbImage): Float64Array {
  const out = new Float64Array(img.width * img.height);
  for (let k = 0; k < out.length; k++) {
    out[k] = 0.299 * img.data[3 * k] + 0.587 * img.data[3 * k + 1]
      + 0.114 * img.data[3 * k + 2];
  }
  return out;
}

/** Bilinear resample to exact target dimensions. */
export function resize(img: RgbImage, width: number, height: number): RgbImage {
  if (width === img.width && height === img.height) return img;
  const data = new Float64Array(width * height * 3);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min(img.height - 1, (y + 0.5) * sy - 0.5);
    const y0 = Math.max(0, Math.floor(fy));
    const y1 = Math.min(img.height - 1, y0 + 1);
    const wy = fy - y0;
    for (let x = 0; x < width; x++) {
      const fx = Math.min(img.width - 1, (x + 0.5) * sx - 0.5);
      const x0 = Math.max(0, Math.floor(fx));
      const x1 = Math.min(img.width - 1, x0 + 1);
      const wx = fx - x0;
      for (let c = 0; c < 3; c++) {
        const a = img.data[3 * (y0 * img.width + x0) + c];
        const b = img.data[3 * (y0 * img.width + x1) + c];
        const d = img.data[3 * (y1 * img.width + x0) + c];
        const e = img.data[3 * (y1 * img.width + x1) + c];
        data[3 * (y * width + x) + c] =
          (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e);
      }
    }
  }
  return { width, height, data };
}

/** Nearest patch-multiple dimensions (at least one patch each way). */
export function patchAlignedSize(width: number, height: number,
                                 patchSize: number): [number, number] {
  const w = Math.max(patchSize, Math.round(width / patchSize) * patchSize);
  const h = Math.max(patchSize, Math.round(height / patchSize) * patchSize);
  return [w, h];
}
