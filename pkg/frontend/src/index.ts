export { type Encoder, MockEncoder, TransformersClipEncoder, makeEncoder } from "./encoder.js";
export { DEFAULT_SPEC, type ExportSpec, exportClasstext, exportStream } from "./exporter.js";
export {
  type ClassTextSet,
  type StreamSample,
  readClasstext,
  readStream,
  writeClasstext,
  writeStream,
} from "./format.js";
export { decodeImageFile, scanClassFolders, type RgbImage } from "./images.js";
export * from "./errors.js";
