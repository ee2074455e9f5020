#!/usr/bin/env node
/**
 * dualproto-export export-classtext --classes cat,dog --out-prefix pets
 * dualproto-export export-stream --images ./data --views 8 --out-prefix pets
 *
 * Exit codes: 0 ok, 1 usage error, 2 data/model error.
 */

import { makeEncoder } from "./encoder.js";
import { ExporterError } from "./errors.js";
import { DEFAULT_SPEC, type ExportSpec, exportClasstext, exportStream } from "./exporter.js";
import { scanClassFolders } from "./images.js";

interface Flags {
  [key: string]: string | string[] | boolean;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new UsageError(`unexpected argument ${arg}`);
    const name = arg.slice(2);
    if (name === "no-flip") {
      flags[name] = true;
      continue;
    }
    const value = argv[i + 1];
    if (value === undefined) throw new UsageError(`flag --${name} needs a value`);
    i += 1;
    if (name === "prompt") {
      (flags[name] = (flags[name] as string[]) ?? []) &&
        (flags[name] as string[]).push(value);
    } else {
      flags[name] = value;
    }
  }
  return flags;
}

class UsageError extends Error {}

function buildSpec(flags: Flags): ExportSpec {
  if (!flags["out-prefix"]) throw new UsageError("--out-prefix is required");
  return {
    ...DEFAULT_SPEC,
    model: (flags["model"] as string) ?? DEFAULT_SPEC.model,
    mockDim: flags["dim"] ? parseInt(flags["dim"] as string, 10) : DEFAULT_SPEC.mockDim,
    imageRoot: flags["images"] as string | undefined,
    prompts: (flags["prompt"] as string[]) ?? DEFAULT_SPEC.prompts,
    views: flags["views"] ? parseInt(flags["views"] as string, 10) : DEFAULT_SPEC.views,
    cropScaleMin: flags["scale-min"]
      ? parseFloat(flags["scale-min"] as string)
      : DEFAULT_SPEC.cropScaleMin,
    cropScaleMax: flags["scale-max"]
      ? parseFloat(flags["scale-max"] as string)
      : DEFAULT_SPEC.cropScaleMax,
    flipProbability: flags["no-flip"] ? 0.0 : DEFAULT_SPEC.flipProbability,
    outPrefix: flags["out-prefix"] as string,
    seed: flags["seed"] ? parseInt(flags["seed"] as string, 10) : DEFAULT_SPEC.seed,
  };
}

async function run(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (!command || command === "--help" || command === "help") {
    console.log(
      "usage: dualproto-export <export-classtext|export-stream> [--model mock|<clip-id>]\n" +
        "  export-classtext --classes a,b,... | --images DIR  [--prompt TMPL]... --out-prefix P\n" +
        "  export-stream    --images DIR [--views N] [--seed S] [--scale-min F] [--scale-max F]\n" +
        "                   [--no-flip] [--dim D] --out-prefix P",
    );
    return command ? 0 : 1;
  }
  const flags = parseFlags(rest);
  const spec = buildSpec(flags);
  const encoder = await makeEncoder(spec.model, spec.mockDim);

  if (command === "export-classtext") {
    let classNames: string[];
    if (flags["classes"]) {
      classNames = (flags["classes"] as string).split(",").map((s) => s.trim());
    } else if (spec.imageRoot) {
      classNames = scanClassFolders(spec.imageRoot).classNames;
    } else {
      throw new UsageError("need --classes or --images to name the classes");
    }
    const path = await exportClasstext(spec, encoder, classNames);
    console.log(`wrote ${path} (${classNames.length} classes, dim ${encoder.dim})`);
    return 0;
  }
  if (command === "export-stream") {
    const result = await exportStream(spec, encoder);
    console.log(
      `wrote ${result.path} (${result.samples} samples, ` +
        `${result.skipped} skipped, dim ${encoder.dim})`,
    );
    return 0;
  }
  throw new UsageError(`unknown command ${command}`);
}

run(process.argv.slice(2))
  .then((code) => process.exit(code))
  .catch((err) => {
    if (err instanceof UsageError) {
      console.error(`dualproto-export: ${err.message}`);
      process.exit(1);
    }
    if (err instanceof ExporterError) {
      console.error(`dualproto-export: ${err.constructor.name}: ${err.message}`);
      process.exit(2);
    }
    console.error(err);
    process.exit(2);
  });
