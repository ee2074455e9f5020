import { applyCrop, centerCrop, sampleCrop } from "./augment.js";
import type { Encoder } from "./encoder.js";
import { EmptyPrompts, ImageDecodeError } from "./errors.js";
import {
  type ClassTextSet,
  type StreamSample,
  writeClasstext,
  writeStream,
} from "./format.js";
import { decodeImageFile, scanClassFolders } from "./images.js";
import { Rng, hashString, l2Normalize } from "./rng.js";

export interface ExportSpec {
  /** "mock" or a CLIP-family model id */
  model: string;
  mockDim: number;
  /** folder-per-class image root (stream export) */
  imageRoot?: string;
  /** prompt templates; "{class}" is replaced by the class name */
  prompts: string[];
  /** total views per image, original included */
  views: number;
  cropScaleMin: number;
  cropScaleMax: number;
  flipProbability: number;
  outPrefix: string;
  seed: number;
}

export const DEFAULT_SPEC: Omit<ExportSpec, "outPrefix"> = {
  model: "mock",
  mockDim: 64,
  prompts: ["a photo of a {class}."],
  views: 64,
  cropScaleMin: 0.5,
  cropScaleMax: 1.0,
  flipProbability: 0.5,
  seed: 0,
};

export async function exportClasstext(
  spec: ExportSpec,
  encoder: Encoder,
  classNames: string[],
): Promise<string> {
  if (spec.prompts.length === 0) throw new EmptyPrompts("no prompt templates given");
  if (classNames.length === 0) throw new EmptyPrompts("no class names given");
  const embeddings: Float32Array[][] = [];
  for (const name of classNames) {
    const filled = spec.prompts.map((t) => t.replaceAll("{class}", name));
    const vectors = await encoder.encodeTexts(filled);
    embeddings.push(vectors.map(l2Normalize));
  }
  const set: ClassTextSet = { classNames, embeddings, dim: encoder.dim };
  const path = `${spec.outPrefix}.dpec`;
  writeClasstext(path, set);
  return path;
}

export interface StreamExportResult {
  path: string;
  samples: number;
  skipped: number;
  classNames: string[];
}

export async function exportStream(
  spec: ExportSpec,
  encoder: Encoder,
): Promise<StreamExportResult> {
  if (!spec.imageRoot) throw new ImageDecodeError("no image root given");
  const { classNames, entries } = scanClassFolders(spec.imageRoot);
  const samples: StreamSample[] = [];
  let skipped = 0;
  for (const entry of entries) {
    let image;
    try {
      image = decodeImageFile(entry.path);
    } catch (err) {
      if (err instanceof ImageDecodeError) {
        console.warn(`skipping ${entry.path}: ${err.message}`);
        skipped += 1;
        continue;
      }
      throw err;
    }
    const rng = new Rng(hashString(`${spec.seed}:${entry.className}/${entry.path}`));
    const sized = encoder.inputSize;
    const crops = [centerCrop(image, sized)];
    for (let v = 1; v < spec.views; v++) {
      const params = sampleCrop(
        rng, image.width, image.height,
        spec.cropScaleMin, spec.cropScaleMax, spec.flipProbability,
      );
      crops.push(applyCrop(image, params, sized));
    }
    const vectors = await encoder.encodeImages(crops);
    samples.push({ views: vectors.map(l2Normalize), label: entry.label });
  }
  const path = `${spec.outPrefix}.dpes`;
  writeStream(path, samples, encoder.dim);
  return { path, samples: samples.length, skipped, classNames };
}
