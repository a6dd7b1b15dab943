#!/usr/bin/env node
import { ImageReadError } from "./imageio";
import { ModelLoadError } from "./features";
import { DEFAULT_EXPORT, DimensionMismatchError, ExportConfig, Intrinsics,
         exportPair, writeExport } from "./exporter";

const USAGE = `usage: harmonicpose-export <imageA> <imageB> --output <file>
  [--k N] [--min-sim S] [--max-keypoints N] [--nms-radius R]
  [--patch-size P] [--backbone NAME] [--intrinsics fx,fy,cx,cy]
  [--intrinsics-b fx,fy,cx,cy] [--descriptors-out FILE]

Exports keypoints, interpolated patch descriptors, and mutual top-K
candidate edges from an image pair as an association file.
Exit codes: 0 ok, 1 usage, 2 input error, 3 model error.`;

function parseIntrinsics(raw: string): Intrinsics {
  const parts = raw.split(",").map(Number);
  if (parts.length !== 4 || parts.some((v) => !Number.isFinite(v))) {
    throw new UsageError(`bad intrinsics '${raw}' (want fx,fy,cx,cy)`);
  }
  return { fx: parts[0], fy: parts[1], cx: parts[2], cy: parts[3] };
}

class UsageError extends Error {}

function parseArgs(argv: string[]): { cfg: ExportConfig; output: string } {
  const positional: string[] = [];
  const opts = new Map<string, string>();
  for (let k = 0; k < argv.length; k++) {
    const a = argv[k];
    if (a.startsWith("--")) {
      const value = argv[k + 1];
      if (value === undefined) throw new UsageError(`missing value for ${a}`);
      opts.set(a.slice(2), value);
      k++;
    } else {
      positional.push(a);
    }
  }
  if (positional.length !== 2) {
    throw new UsageError("need exactly two image paths");
  }
  const output = opts.get("output");
  if (!output) throw new UsageError("--output is required");
  const num = (name: string, dflt: number): number => {
    const raw = opts.get(name);
    if (raw === undefined) return dflt;
    const v = Number(raw);
    if (!Number.isFinite(v)) throw new UsageError(`bad number for --${name}`);
    return v;
  };
  const cfg: ExportConfig = {
    imageA: positional[0],
    imageB: positional[1],
    patchSize: num("patch-size", DEFAULT_EXPORT.patchSize),
    nmsRadius: num("nms-radius", DEFAULT_EXPORT.nmsRadius),
    maxKeypoints: num("max-keypoints", DEFAULT_EXPORT.maxKeypoints),
    k: num("k", DEFAULT_EXPORT.k),
    minSim: num("min-sim", DEFAULT_EXPORT.minSim),
    edgeCap: num("edge-cap", DEFAULT_EXPORT.edgeCap),
    backbone: opts.get("backbone") ?? DEFAULT_EXPORT.backbone,
    descriptorsOut: opts.get("descriptors-out"),
  };
  const intr = opts.get("intrinsics");
  if (intr) {
    cfg.intrinsicsA = parseIntrinsics(intr);
    cfg.intrinsicsB = parseIntrinsics(opts.get("intrinsics-b") ?? intr);
  }
  return { cfg, output };
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      process.stderr.write(`error: ${err.message}\n${USAGE}\n`);
      return 1;
    }
    throw err;
  }
  try {
    const result = exportPair(parsed.cfg);
    writeExport(parsed.output, result);
    process.stdout.write(JSON.stringify({
      command: "export",
      output: parsed.output,
      left_keypoints: result.left.keypoints.length,
      right_keypoints: result.right.keypoints.length,
      edges: result.nEdges,
      config: { ...parsed.cfg },
    }, null, 1) + "\n");
    return 0;
  } catch (err) {
    if (err instanceof ModelLoadError) {
      process.stderr.write(`model error: ${err.message}\n`);
      return 3;
    }
    if (err instanceof ImageReadError || err instanceof DimensionMismatchError) {
      process.stderr.write(`input error: ${err.message}\n`);
      return 2;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
