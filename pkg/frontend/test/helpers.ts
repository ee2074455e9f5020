import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { PNG } from "pngjs";

import type { RgbImage } from "../src/images.js";
import { Rng } from "../src/rng.js";

export function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

/** Write a small PNG filled with a seeded color gradient. */
export function writePng(filePath: string, width: number, height: number, seed: number): void {
  const rng = new Rng(seed);
  const png = new PNG({ width, height });
  const base = [rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = (y * width + x) * 4;
      png.data[idx] = Math.floor((base[0] + x * 2) % 256);
      png.data[idx + 1] = Math.floor((base[1] + y * 2) % 256);
      png.data[idx + 2] = Math.floor((base[2] + x + y) % 256);
      png.data[idx + 3] = 255;
    }
  }
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

/** Folder-per-class dataset of seeded PNGs; returns the root. */
export function makeDataset(
  classes: string[],
  perClass: number,
  size = 48,
): string {
  const root = tempDir("dpe-dataset-");
  classes.forEach((name, c) => {
    const dir = path.join(root, name);
    fs.mkdirSync(dir);
    for (let i = 0; i < perClass; i++) {
      writePng(path.join(dir, `img_${i}.png`), size, size, c * 1000 + i);
    }
  });
  return root;
}

export function solidImage(width: number, height: number, rgb: [number, number, number]): RgbImage {
  const data = new Uint8Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    data[p * 3] = rgb[0];
    data[p * 3 + 1] = rgb[1];
    data[p * 3 + 2] = rgb[2];
  }
  return { width, height, data };
}
