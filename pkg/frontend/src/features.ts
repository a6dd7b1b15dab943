import * as fs from "fs";
import { RgbImage, luminance } from "./imageio";

/** Per-patch feature map: grid of D-dimensional descriptors. */
export interface FeatureMap {
  gridW: number;
  gridH: number;
  dim: number;
  patchSize: number;
  /** Row-major, gridH x gridW x dim. */
  data: Float64Array;
}

/** Pluggable backbone: patch size plus a feature-map function. */
export interface Backbone {
  patchSize: number;
  featureMap(img: RgbImage): FeatureMap;
}

export class ModelLoadError extends Error {}

/**
 * Built-in procedural backbone.
 *
 * Each patch is described by mean color, luminance statistics, and an
 * 8-bin gradient orientation histogram; deterministic and dependency-free,
 * standing in for a learned patch encoder behind the same interface.
 */
export function builtinBackbone(patchSize: number): Backbone {
  return {
    patchSize,
    featureMap(img: RgbImage): FeatureMap {
      if (img.width % patchSize !== 0 || img.height % patchSize !== 0) {
        throw new Error(
          `image ${img.width}x${img.height} not a multiple of patch size ${patchSize}`);
      }
      const gridW = img.width / patchSize;
      const gridH = img.height / patchSize;
      const dim = 16;
      const lum = luminance(img);
      const data = new Float64Array(gridW * gridH * dim);
      for (let py = 0; py < gridH; py++) {
        for (let px = 0; px < gridW; px++) {
          const f = new Float64Array(dim);
          let n = 0;
          let mean = 0;
          let m2 = 0;
          for (let y = py * patchSize; y < (py + 1) * patchSize; y++) {
            for (let x = px * patchSize; x < (px + 1) * patchSize; x++) {
              const k = y * img.width + x;
              f[0] += img.data[3 * k];
              f[1] += img.data[3 * k + 1];
              f[2] += img.data[3 * k + 2];
              const v = lum[k];
              n += 1;
              const d = v - mean;
              mean += d / n;
              m2 += d * (v - mean);
              if (x > 0 && x < img.width - 1 && y > 0 && y < img.height - 1) {
                const dx = (lum[k + 1] - lum[k - 1]) / 2;
                const dy = (lum[k + img.width] - lum[k - img.width]) / 2;
                const mag = Math.hypot(dx, dy);
                if (mag > 1e-9) {
                  const ang = Math.atan2(dy, dx); // [-pi, pi]
                  let bin = Math.floor((ang + Math.PI) / (Math.PI / 4));
                  if (bin > 7) bin = 7;
                  f[5 + bin] += mag;
                }
              }
            }
          }
          f[0] /= n;
          f[1] /= n;
          f[2] /= n;
          f[3] = mean;
          f[4] = Math.sqrt(m2 / n);
          // Bias channels keep descriptors nonzero on flat patches and damp
          // the similarity contrast between unrelated patches.
          f[13] = 0.15;
          f[14] = 0.1 * (f[0] - f[2]);
          f[15] = 0.1 * (2 * f[1] - f[0] - f[2]);
          data.set(f, (py * gridW + px) * dim);
        }
      }
      return { gridW, gridH, dim, patchSize, data };
    },
  };
}

/**
 * Resolve a backbone by name: "builtin[:patchSize]" or an external model
 * directory (weights are looked up under the model cache directory given by
 * HARMONICPOSE_MODEL_DIR); external models are loaded by a loader script
 * that this build does not ship, so a missing one is a distinct error.
 */
export function resolveBackbone(spec: string, patchSize: number): Backbone {
  if (spec === "builtin") {
    return builtinBackbone(patchSize);
  }
  const cache = process.env.HARMONICPOSE_MODEL_DIR;
  if (!cache) {
    throw new ModelLoadError(
      `backbone '${spec}' needs HARMONICPOSE_MODEL_DIR to locate weights`);
  }
  const dir = `${cache}/${spec}`;
  if (!fs.existsSync(dir)) {
    throw new ModelLoadError(`backbone weights not found under '${dir}'`);
  }
  throw new ModelLoadError(
    `no loader available for external backbone '${spec}'`);
}

/** Raw bilinear interpolation of the patch grid at a pixel position. */
export function interpolateFeature(map: FeatureMap, x: number,
                                   y: number): Float64Array {
  const gx = x / map.patchSize - 0.5;
  const gy = y / map.patchSize - 0.5;
  const x0 = Math.min(map.gridW - 1, Math.max(0, Math.floor(gx)));
  const y0 = Math.min(map.gridH - 1, Math.max(0, Math.floor(gy)));
  const x1 = Math.min(map.gridW - 1, x0 + 1);
  const y1 = Math.min(map.gridH - 1, y0 + 1);
  const wx = Math.min(1, Math.max(0, gx - x0));
  const wy = Math.min(1, Math.max(0, gy - y0));
  const out = new Float64Array(map.dim);
  const corners: Array<[number, number, number]> = [
    [x0, y0, (1 - wx) * (1 - wy)],
    [x1, y0, wx * (1 - wy)],
    [x0, y1, (1 - wx) * wy],
    [x1, y1, wx * wy],
  ];
  for (const [cx, cy, w] of corners) {
    if (w === 0) continue;
    const base = (cy * map.gridW + cx) * map.dim;
    for (let d = 0; d < map.dim; d++) out[d] += w * map.data[base + d];
  }
  return out;
}

export function normalized(v: Float64Array): Float64Array {
  let s = 0;
  for (const c of v) s += c * c;
  const n = Math.sqrt(s);
  if (n === 0) {
    throw new Error("zero-norm descriptor");
  }
  const out = new Float64Array(v.length);
  for (let d = 0; d < v.length; d++) out[d] = v[d] / n;
  return out;
}
