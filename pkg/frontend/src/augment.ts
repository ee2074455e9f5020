import type { RgbImage } from "./images.js";
import { Rng } from "./rng.js";

export interface CropParams {
  x: number;
  y: number;
  width: number;
  height: number;
  flip: boolean;
}

/**
 * Sample a random resized crop the way test-time augmentation pipelines do:
 * draw an area fraction and aspect ratio, retry a few times, fall back to a
 * centered square.
 */
export function sampleCrop(
  rng: Rng,
  width: number,
  height: number,
  scaleMin: number,
  scaleMax: number,
  flipProbability: number,
  ratioMin = 3 / 4,
  ratioMax = 4 / 3,
): CropParams {
  const area = width * height;
  const flip = rng.next() < flipProbability;
  for (let attempt = 0; attempt < 10; attempt++) {
    const targetArea = area * rng.uniform(scaleMin, scaleMax);
    const logRatio = rng.uniform(Math.log(ratioMin), Math.log(ratioMax));
    const ratio = Math.exp(logRatio);
    const cropW = Math.round(Math.sqrt(targetArea * ratio));
    const cropH = Math.round(Math.sqrt(targetArea / ratio));
    if (cropW >= 1 && cropH >= 1 && cropW <= width && cropH <= height) {
      const x = Math.floor(rng.uniform(0, width - cropW + 1));
      const y = Math.floor(rng.uniform(0, height - cropH + 1));
      return { x, y, width: cropW, height: cropH, flip };
    }
  }
  const side = Math.min(width, height);
  return {
    x: Math.floor((width - side) / 2),
    y: Math.floor((height - side) / 2),
    width: side,
    height: side,
    flip,
  };
}

/** Crop, optionally mirror, and bilinearly resize to a square of `outSize`. */
export function applyCrop(img: RgbImage, crop: CropParams, outSize: number): RgbImage {
  const out = new Uint8Array(outSize * outSize * 3);
  for (let oy = 0; oy < outSize; oy++) {
    const sy = crop.y + ((oy + 0.5) / outSize) * crop.height - 0.5;
    for (let ox = 0; ox < outSize; ox++) {
      const mirrored = crop.flip ? outSize - 1 - ox : ox;
      const sx = crop.x + ((mirrored + 0.5) / outSize) * crop.width - 0.5;
      bilinear(img, sx, sy, out, (oy * outSize + ox) * 3);
    }
  }
  return { width: outSize, height: outSize, data: out };
}

/** Standard "original view" preprocessing: center square, then resize. */
export function centerCrop(img: RgbImage, outSize: number): RgbImage {
  const side = Math.min(img.width, img.height);
  return applyCrop(
    img,
    {
      x: Math.floor((img.width - side) / 2),
      y: Math.floor((img.height - side) / 2),
      width: side,
      height: side,
      flip: false,
    },
    outSize,
  );
}

function bilinear(
  img: RgbImage,
  sx: number,
  sy: number,
  out: Uint8Array,
  offset: number,
): void {
  const x0 = Math.max(0, Math.min(img.width - 1, Math.floor(sx)));
  const y0 = Math.max(0, Math.min(img.height - 1, Math.floor(sy)));
  const x1 = Math.min(img.width - 1, x0 + 1);
  const y1 = Math.min(img.height - 1, y0 + 1);
  const fx = Math.max(0, Math.min(1, sx - x0));
  const fy = Math.max(0, Math.min(1, sy - y0));
  for (let ch = 0; ch < 3; ch++) {
    const tl = img.data[(y0 * img.width + x0) * 3 + ch];
    const tr = img.data[(y0 * img.width + x1) * 3 + ch];
    const bl = img.data[(y1 * img.width + x0) * 3 + ch];
    const br = img.data[(y1 * img.width + x1) * 3 + ch];
    const top = tl + (tr - tl) * fx;
    const bottom = bl + (br - bl) * fx;
    out[offset + ch] = Math.round(top + (bottom - top) * fy);
  }
}
