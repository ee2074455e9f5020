export class ExporterError extends Error {}

export class ModelLoadError extends ExporterError {}

export class EmptyPrompts extends ExporterError {}

export class ImageDecodeError extends ExporterError {}

export class FormatError extends ExporterError {}
