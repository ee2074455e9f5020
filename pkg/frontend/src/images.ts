import * as fs from "node:fs";
import * as path from "node:path";

import jpeg from "jpeg-js";
import { PNG } from "pngjs";

import { ImageDecodeError } from "./errors.js";

/** Row-major interleaved RGB pixels. */
export interface RgbImage {
  width: number;
  height: number;
  data: Uint8Array;
}

const EXTENSIONS = new Set([".png", ".jpg", ".jpeg"]);

function rgbaToRgb(width: number, height: number, rgba: Uint8Array): RgbImage {
  const out = new Uint8Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    out[p * 3] = rgba[p * 4];
    out[p * 3 + 1] = rgba[p * 4 + 1];
    out[p * 3 + 2] = rgba[p * 4 + 2];
  }
  return { width, height, data: out };
}

export function decodeImageFile(filePath: string): RgbImage {
  const raw = fs.readFileSync(filePath);
  const ext = path.extname(filePath).toLowerCase();
  try {
    if (ext === ".png") {
      const png = PNG.sync.read(raw);
      return rgbaToRgb(png.width, png.height, new Uint8Array(png.data));
    }
    if (ext === ".jpg" || ext === ".jpeg") {
      const img = jpeg.decode(raw, { useTArray: true, formatAsRGBA: true });
      return rgbaToRgb(img.width, img.height, new Uint8Array(img.data));
    }
  } catch (err) {
    throw new ImageDecodeError(`${filePath}: ${(err as Error).message}`);
  }
  throw new ImageDecodeError(`${filePath}: unsupported extension ${ext}`);
}

export interface DatasetEntry {
  path: string;
  label: number;
  className: string;
}

/** Scan a folder-per-class dataset; class order and file order are sorted. */
export function scanClassFolders(root: string): {
  classNames: string[];
  entries: DatasetEntry[];
} {
  const classNames = fs
    .readdirSync(root, { withFileTypes: true })
    .filter((d) => d.isDirectory())
    .map((d) => d.name)
    .sort();
  const entries: DatasetEntry[] = [];
  classNames.forEach((className, label) => {
    const dir = path.join(root, className);
    const files = fs
      .readdirSync(dir)
      .filter((f) => EXTENSIONS.has(path.extname(f).toLowerCase()))
      .sort();
    for (const file of files) {
      entries.push({ path: path.join(dir, file), label, className });
    }
  });
  return { classNames, entries };
}
