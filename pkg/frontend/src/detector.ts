import { RgbImage, luminance } from "./imageio";

export interface Keypoint {
  x: number;
  y: number;
  score: number;
}

export interface DetectorConfig {
  nmsRadius: number;
  maxKeypoints: number;
  /** Minimum corner response, relative to the strongest one. */
  minRelScore: number;
}

export const DEFAULT_DETECTOR: DetectorConfig = {
  nmsRadius: 4,
  maxKeypoints: 1024,
  minRelScore: 1e-3,
};

/** Pluggable keypoint detector interface. */
export type Detector = (img: RgbImage, cfg: DetectorConfig) => Keypoint[];

/**
 * Built-in min-eigenvalue corner detector.
 *
 * Sobel gradients, a 3x3-smoothed structure tensor, the smaller eigenvalue
 * as the corner response, then radius-based non-maximal suppression and a
 * deterministic top-K cut (ties broken by row-major position).
 */
export const detectCorners: Detector = (img, cfg) => {
  const { width: w, height: h } = img;
  const lum = luminance(img);
  const gx = new Float64Array(w * h);
  const gy = new Float64Array(w * h);
  for (let y = 1; y < h - 1; y++) {
    for (let x = 1; x < w - 1; x++) {
      const k = y * w + x;
      gx[k] = (lum[k - w + 1] + 2 * lum[k + 1] + lum[k + w + 1]
        - lum[k - w - 1] - 2 * lum[k - 1] - lum[k + w - 1]) / 8;
      gy[k] = (lum[k + w - 1] + 2 * lum[k + w] + lum[k + w + 1]
        - lum[k - w - 1] - 2 * lum[k - w] - lum[k - w + 1]) / 8;
    }
  }
  const response = new Float64Array(w * h);
  for (let y = 2; y < h - 2; y++) {
    for (let x = 2; x < w - 2; x++) {
      let sxx = 0, syy = 0, sxy = 0;
      for (let dy = -1; dy <= 1; dy++) {
        for (let dx = -1; dx <= 1; dx++) {
          const k = (y + dy) * w + (x + dx);
          sxx += gx[k] * gx[k];
          syy += gy[k] * gy[k];
          sxy += gx[k] * gy[k];
        }
      }
      const tr = sxx + syy;
      const det = sxx * syy - sxy * sxy;
      const disc = Math.sqrt(Math.max(0, tr * tr / 4 - det));
      response[y * w + x] = tr / 2 - disc; // smaller eigenvalue
    }
  }

  let peak = 0;
  for (let k = 0; k < response.length; k++) peak = Math.max(peak, response[k]);
  if (peak <= 0) return [];
  const floor = peak * cfg.minRelScore;

  const candidates: Keypoint[] = [];
  for (let y = 2; y < h - 2; y++) {
    for (let x = 2; x < w - 2; x++) {
      const s = response[y * w + x];
      if (s > floor) candidates.push({ x, y, score: s });
    }
  }
  candidates.sort((a, b) => b.score - a.score || a.y - b.y || a.x - b.x);

  const taken: Keypoint[] = [];
  const r2 = cfg.nmsRadius * cfg.nmsRadius;
  for (const c of candidates) {
    if (taken.length >= cfg.maxKeypoints) break;
    let suppressed = false;
    for (const t of taken) {
      const dx = t.x - c.x;
      const dy = t.y - c.y;
      if (dx * dx + dy * dy <= r2) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) taken.push(c);
  }
  taken.sort((a, b) => a.y - b.y || a.x - b.x);
  return taken;
};
