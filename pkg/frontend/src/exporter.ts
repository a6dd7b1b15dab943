import * as fs from "fs";
import { loadImage, patchAlignedSize, resize, RgbImage } from "./imageio";
import { DEFAULT_DETECTOR, Detector, DetectorConfig, Keypoint,
         detectCorners } from "./detector";
import { Backbone, interpolateFeature, normalized,
         resolveBackbone } from "./features";
import { mutualTopK } from "./mknn";

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface ExportConfig {
  imageA: string;
  imageB: string;
  patchSize: number;
  nmsRadius: number;
  maxKeypoints: number;
  k: number;
  minSim: number;
  edgeCap: number;
  backbone: string;
  intrinsicsA?: Intrinsics;
  intrinsicsB?: Intrinsics;
  descriptorsOut?: string;
}

export const DEFAULT_EXPORT: Omit<ExportConfig, "imageA" | "imageB"> = {
  patchSize: 16,
  nmsRadius: 4,
  maxKeypoints: 1024,
  k: 5,
  minSim: 0.7,
  edgeCap: 1024,
  backbone: "builtin",
};

export interface CameraExport {
  keypoints: Keypoint[];
  descriptors: Float64Array[];
  pixels: Array<[number, number]>;
  bearings?: Array<[number, number, number]>;
  intrinsics?: Intrinsics;
  width: number;
  height: number;
  scaleX: number;
  scaleY: number;
}

export class DimensionMismatchError extends Error {}

function describeImage(path: string, cfg: ExportConfig, backbone: Backbone,
                       detector: Detector,
                       intrinsics?: Intrinsics): CameraExport {
  const raw = loadImage(path);
  const [w, h] = patchAlignedSize(raw.width, raw.height, backbone.patchSize);
  const img: RgbImage = resize(raw, w, h);
  const scaleX = w / raw.width;
  const scaleY = h / raw.height;
  const detCfg: DetectorConfig = {
    nmsRadius: cfg.nmsRadius,
    maxKeypoints: cfg.maxKeypoints,
    minRelScore: DEFAULT_DETECTOR.minRelScore,
  };
  const keypoints = detector(img, detCfg);
  const map = backbone.featureMap(img);
  if (map.gridW * map.patchSize !== w || map.gridH * map.patchSize !== h) {
    throw new DimensionMismatchError(
      `backbone grid ${map.gridW}x${map.gridH} (patch ${map.patchSize}) ` +
      `does not tile ${w}x${h}`);
  }
  const descriptors = keypoints.map((kp) =>
    normalized(interpolateFeature(map, kp.x, kp.y)));
  const pixels = keypoints.map((kp): [number, number] => [kp.x, kp.y]);
  let bearings: Array<[number, number, number]> | undefined;
  let scaled: Intrinsics | undefined;
  if (intrinsics) {
    scaled = {
      fx: intrinsics.fx * scaleX,
      fy: intrinsics.fy * scaleY,
      cx: intrinsics.cx * scaleX,
      cy: intrinsics.cy * scaleY,
    };
    bearings = pixels.map(([u, v]) => {
      const x = (u - scaled!.cx) / scaled!.fx;
      const y = (v - scaled!.cy) / scaled!.fy;
      const n = Math.hypot(x, y, 1.0);
      return [x / n, y / n, 1.0 / n];
    });
  }
  return { keypoints, descriptors, pixels, bearings, intrinsics: scaled,
           width: w, height: h, scaleX, scaleY };
}

function cameraBlock(cam: CameraExport): Record<string, unknown> {
  const block: Record<string, unknown> = {
    pixels: cam.pixels.map(([u, v]) => [u, v]),
  };
  if (cam.bearings) {
    block.bearings = cam.bearings.map((b) => b.map((c) => String(c)));
  }
  if (cam.intrinsics) {
    block.intrinsics = cam.intrinsics;
  }
  return block;
}

export interface ExportResult {
  document: Record<string, unknown>;
  left: CameraExport;
  right: CameraExport;
  nEdges: number;
}

export function exportPair(cfg: ExportConfig,
                           detector: Detector = detectCorners,
                           backbone?: Backbone): ExportResult {
  const bb = backbone ?? resolveBackbone(cfg.backbone, cfg.patchSize);
  const left = describeImage(cfg.imageA, cfg, bb, detector, cfg.intrinsicsA);
  const right = describeImage(cfg.imageB, cfg, bb, detector, cfg.intrinsicsB);
  const edges = mutualTopK(left.descriptors, right.descriptors, cfg.k,
                           cfg.minSim, cfg.edgeCap);
  const document = {
    version: 1,
    cameras: { left: cameraBlock(left), right: cameraBlock(right) },
    edges: edges.map((e) => [e.i, e.j, e.similarity]),
  };
  if (cfg.descriptorsOut) {
    const aux = {
      dim: left.descriptors[0]?.length ?? 0,
      left: left.descriptors.map((d) => Array.from(d)),
      right: right.descriptors.map((d) => Array.from(d)),
    };
    fs.writeFileSync(cfg.descriptorsOut, JSON.stringify(aux));
  }
  return { document, left, right, nEdges: edges.length };
}

export function writeExport(path: string, result: ExportResult): void {
  fs.writeFileSync(path, JSON.stringify(result.document, null, 1) + "\n");
}
