import { ModelLoadError } from "./errors.js";
import type { RgbImage } from "./images.js";
import { Rng, hashBytes, hashString, l2Normalize } from "./rng.js";

/** Anything that can embed text and images into one shared unit sphere. */
export interface Encoder {
  readonly dim: number;
  readonly inputSize: number;
  encodeTexts(texts: string[]): Promise<Float32Array[]>;
  encodeImages(images: RgbImage[]): Promise<Float32Array[]>;
}

/**
 * Deterministic stand-in encoder: content-hashed gaussian directions on the
 * unit sphere. No semantics, but byte-stable across runs, which is all the
 * format and pipeline tests need.
 */
export class MockEncoder implements Encoder {
  readonly dim: number;
  readonly inputSize: number;

  constructor(dim = 64, inputSize = 32) {
    this.dim = dim;
    this.inputSize = inputSize;
  }

  private vectorFromSeed(seed: number): Float32Array {
    const rng = new Rng(seed);
    const vec = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) vec[i] = rng.gauss();
    return l2Normalize(vec);
  }

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map((t) => this.vectorFromSeed(hashString(`text:${t}`)));
  }

  async encodeImages(images: RgbImage[]): Promise<Float32Array[]> {
    return images.map((img) =>
      this.vectorFromSeed(hashBytes(img.data) ^ hashString(`${img.width}x${img.height}`)),
    );
  }
}

/**
 * Real CLIP-family encoder backed by @huggingface/transformers (optional
 * peer dependency; model weights download on first use).
 */
export class TransformersClipEncoder implements Encoder {
  readonly dim: number;
  readonly inputSize: number;
  private readonly lib: any;
  private readonly tokenizer: any;
  private readonly textModel: any;
  private readonly processor: any;
  private readonly visionModel: any;

  private constructor(parts: {
    lib: any;
    tokenizer: any;
    textModel: any;
    processor: any;
    visionModel: any;
    dim: number;
    inputSize: number;
  }) {
    this.lib = parts.lib;
    this.tokenizer = parts.tokenizer;
    this.textModel = parts.textModel;
    this.processor = parts.processor;
    this.visionModel = parts.visionModel;
    this.dim = parts.dim;
    this.inputSize = parts.inputSize;
  }

  static async load(modelId: string): Promise<TransformersClipEncoder> {
    let lib: any;
    try {
      lib = await import("@huggingface/transformers");
    } catch (err) {
      throw new ModelLoadError(
        `@huggingface/transformers is not installed: ${(err as Error).message}`,
      );
    }
    try {
      const tokenizer = await lib.AutoTokenizer.from_pretrained(modelId);
      const textModel = await lib.CLIPTextModelWithProjection.from_pretrained(modelId);
      const processor = await lib.AutoProcessor.from_pretrained(modelId);
      const visionModel = await lib.CLIPVisionModelWithProjection.from_pretrained(modelId);
      const dim = textModel.config.projection_dim ?? 512;
      const inputSize = processor.image_processor?.crop_size?.width ?? 224;
      return new TransformersClipEncoder({
        lib, tokenizer, textModel, processor, visionModel, dim, inputSize,
      });
    } catch (err) {
      throw new ModelLoadError(`cannot load ${modelId}: ${(err as Error).message}`);
    }
  }

  async encodeTexts(texts: string[]): Promise<Float32Array[]> {
    const inputs = this.tokenizer(texts, { padding: true, truncation: true });
    const { text_embeds } = await this.textModel(inputs);
    return this.splitRows(text_embeds);
  }

  async encodeImages(images: RgbImage[]): Promise<Float32Array[]> {
    const out: Float32Array[] = [];
    for (const img of images) {
      const rgba = new Uint8ClampedArray(img.width * img.height * 4);
      for (let p = 0; p < img.width * img.height; p++) {
        rgba[p * 4] = img.data[p * 3];
        rgba[p * 4 + 1] = img.data[p * 3 + 1];
        rgba[p * 4 + 2] = img.data[p * 3 + 2];
        rgba[p * 4 + 3] = 255;
      }
      const raw = new this.lib.RawImage(rgba, img.width, img.height, 4);
      const inputs = await this.processor(raw);
      const { image_embeds } = await this.visionModel(inputs);
      out.push(...this.splitRows(image_embeds));
    }
    return out;
  }

  private splitRows(tensor: any): Float32Array[] {
    const [rows, cols] = tensor.dims;
    const data: Float32Array = tensor.data;
    const out: Float32Array[] = [];
    for (let r = 0; r < rows; r++) {
      out.push(l2Normalize(data.slice(r * cols, (r + 1) * cols)));
    }
    return out;
  }
}

export async function makeEncoder(model: string, mockDim = 64): Promise<Encoder> {
  if (model === "mock") return new MockEncoder(mockDim);
  return TransformersClipEncoder.load(model);
}
