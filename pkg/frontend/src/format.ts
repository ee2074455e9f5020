/**
 * Binary interchange formats shared with the adaptation engine.
 *
 * Class-text file (.dpec), little-endian:
 *   "DPEC" | u16 version=1 | u32 d | u32 C
 *   per class: u16 nameLen | name utf-8 | u16 S | S*d float32
 *
 * Stream file (.dpes), little-endian:
 *   "DPES" | u16 version=1 | u16 flags (bit0 = labels) | u32 d | u32 n
 *   per sample: u16 nViews | u32 label (0xFFFFFFFF = absent) | nViews*d float32
 *
 * Every stored vector must be unit-L2 within 1e-4.
 */

import * as fs from "node:fs";

import { FormatError } from "./errors.js";

export const CLASSTEXT_MAGIC = "DPEC";
export const STREAM_MAGIC = "DPES";
export const FORMAT_VERSION = 1;
export const NO_LABEL = 0xffffffff;
const UNIT_TOL = 1e-4;

export interface ClassTextSet {
  classNames: string[];
  /** embeddings[c] holds the S_c prompt vectors for class c */
  embeddings: Float32Array[][];
  dim: number;
}

export interface StreamSample {
  views: Float32Array[];
  label: number | null;
}

function checkUnit(vec: Float32Array, what: string): void {
  let sum = 0;
  for (let i = 0; i < vec.length; i++) sum += vec[i] * vec[i];
  const norm = Math.sqrt(sum);
  if (Math.abs(norm - 1.0) > UNIT_TOL) {
    throw new FormatError(`${what}: vector norm ${norm.toFixed(6)} is not unit`);
  }
}

function floatBytes(vec: Float32Array): Buffer {
  const buf = Buffer.alloc(vec.length * 4);
  for (let i = 0; i < vec.length; i++) buf.writeFloatLE(vec[i], i * 4);
  return buf;
}

function readFloats(buf: Buffer, offset: number, count: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = buf.readFloatLE(offset + i * 4);
  return out;
}

export function encodeClasstext(set: ClassTextSet): Buffer {
  if (set.classNames.length !== set.embeddings.length) {
    throw new FormatError("class names and embeddings disagree on class count");
  }
  const parts: Buffer[] = [];
  const head = Buffer.alloc(14);
  head.write(CLASSTEXT_MAGIC, 0, "ascii");
  head.writeUInt16LE(FORMAT_VERSION, 4);
  head.writeUInt32LE(set.dim, 6);
  head.writeUInt32LE(set.classNames.length, 10);
  parts.push(head);
  set.classNames.forEach((name, c) => {
    const rows = set.embeddings[c];
    if (rows.length === 0) throw new FormatError(`class ${name}: no prompt vectors`);
    const nameBytes = Buffer.from(name, "utf-8");
    const meta = Buffer.alloc(2);
    meta.writeUInt16LE(nameBytes.length, 0);
    const count = Buffer.alloc(2);
    count.writeUInt16LE(rows.length, 0);
    parts.push(meta, nameBytes, count);
    for (const row of rows) {
      if (row.length !== set.dim) {
        throw new FormatError(`class ${name}: vector dim ${row.length} != ${set.dim}`);
      }
      checkUnit(row, `class ${name}`);
      parts.push(floatBytes(row));
    }
  });
  return Buffer.concat(parts);
}

export function writeClasstext(path: string, set: ClassTextSet): void {
  fs.writeFileSync(path, encodeClasstext(set));
}

export function readClasstext(path: string): ClassTextSet {
  const buf = fs.readFileSync(path);
  if (buf.toString("ascii", 0, 4) !== CLASSTEXT_MAGIC) {
    throw new FormatError("bad classtext magic");
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) throw new FormatError(`bad version ${version}`);
  const dim = buf.readUInt32LE(6);
  const classes = buf.readUInt32LE(10);
  let offset = 14;
  const classNames: string[] = [];
  const embeddings: Float32Array[][] = [];
  for (let c = 0; c < classes; c++) {
    const nameLen = buf.readUInt16LE(offset);
    offset += 2;
    classNames.push(buf.toString("utf-8", offset, offset + nameLen));
    offset += nameLen;
    const count = buf.readUInt16LE(offset);
    offset += 2;
    const rows: Float32Array[] = [];
    for (let s = 0; s < count; s++) {
      const row = readFloats(buf, offset, dim);
      checkUnit(row, `class ${classNames[c]}`);
      rows.push(row);
      offset += dim * 4;
    }
    embeddings.push(rows);
  }
  if (offset !== buf.length) throw new FormatError("trailing bytes in classtext file");
  return { classNames, embeddings, dim };
}

export function encodeStream(samples: StreamSample[], dim: number): Buffer {
  const parts: Buffer[] = [];
  const labelled = samples.some((s) => s.label !== null);
  const head = Buffer.alloc(16);
  head.write(STREAM_MAGIC, 0, "ascii");
  head.writeUInt16LE(FORMAT_VERSION, 4);
  head.writeUInt16LE(labelled ? 1 : 0, 6);
  head.writeUInt32LE(dim, 8);
  head.writeUInt32LE(samples.length, 12);
  parts.push(head);
  samples.forEach((sample, i) => {
    const meta = Buffer.alloc(6);
    meta.writeUInt16LE(sample.views.length, 0);
    meta.writeUInt32LE(sample.label === null ? NO_LABEL : sample.label, 2);
    parts.push(meta);
    for (const view of sample.views) {
      if (view.length !== dim) {
        throw new FormatError(`sample ${i}: view dim ${view.length} != ${dim}`);
      }
      checkUnit(view, `sample ${i}`);
      parts.push(floatBytes(view));
    }
  });
  return Buffer.concat(parts);
}

export function writeStream(path: string, samples: StreamSample[], dim: number): void {
  fs.writeFileSync(path, encodeStream(samples, dim));
}

export function readStream(path: string): { samples: StreamSample[]; dim: number } {
  const buf = fs.readFileSync(path);
  if (buf.toString("ascii", 0, 4) !== STREAM_MAGIC) {
    throw new FormatError("bad stream magic");
  }
  if (buf.readUInt16LE(4) !== FORMAT_VERSION) throw new FormatError("bad version");
  const dim = buf.readUInt32LE(8);
  const count = buf.readUInt32LE(12);
  let offset = 16;
  const samples: StreamSample[] = [];
  for (let i = 0; i < count; i++) {
    const nViews = buf.readUInt16LE(offset);
    const label = buf.readUInt32LE(offset + 2);
    offset += 6;
    const views: Float32Array[] = [];
    for (let v = 0; v < nViews; v++) {
      views.push(readFloats(buf, offset, dim));
      offset += dim * 4;
    }
    samples.push({ views, label: label === NO_LABEL ? null : label });
  }
  if (offset !== buf.length) throw new FormatError("trailing bytes in stream file");
  return { samples, dim };
}
