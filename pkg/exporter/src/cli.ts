#!/usr/bin/env node
/** ood-export: bridge detectors to the ood-audit dump format.
 *
 *   ood-export detect --images DIR --model ID --layer-tag TAG
 *       [--conf-floor F] [--seed N] [--split KIND] [--emit-head] --out DUMP
 *   ood-export aux --dump DUMP --model ID --prompts a,b,c [--seed N]
 *       [--conf-floor F] [--out DUMP]
 *   ood-export similarity --id-categories a,b --candidates x,y --out JSON
 *
 * Mirrors the primary tool's conventions: explicit seeds, JSON errors on
 * stderr, exit 0 only on success.
 */

import { writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { exportAux, exportDetections, writeDump } from "./export.js";
import { similarityTable } from "./similarity.js";
import type { DumpHeader } from "./types.js";

function usage(): string {
  return [
    "usage: ood-export <detect|aux|similarity> [options]",
    "  detect      run a detector over an image folder and write a dump",
    "  aux         merge open-vocabulary detections into an existing dump",
    "  similarity  emit a category-name similarity table (JSON)",
  ].join("\n");
}

function requireOption(value: string | undefined, name: string): string {
  if (value === undefined || value === "") {
    throw new Error(`missing required option --${name}`);
  }
  return value;
}

function splitList(value: string): string[] {
  return value
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

function runDetect(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      images: { type: "string" },
      model: { type: "string" },
      "layer-tag": { type: "string" },
      "conf-floor": { type: "string" },
      seed: { type: "string" },
      split: { type: "string" },
      "emit-head": { type: "boolean" },
      out: { type: "string" },
    },
  });
  const lines = exportDetections({
    modelId: requireOption(values.model, "model"),
    imagesDir: requireOption(values.images, "images"),
    layerTag: requireOption(values["layer-tag"], "layer-tag"),
    confFloor: values["conf-floor"] ? Number(values["conf-floor"]) : 0.0,
    seed: values.seed ? Number(values.seed) : 0,
    splitKind: (values.split as DumpHeader["split_kind"]) ?? "id_cali",
    emitHead: values["emit-head"] ?? false,
  });
  writeDump(lines, requireOption(values.out, "out"));
}

function runAux(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      dump: { type: "string" },
      model: { type: "string" },
      prompts: { type: "string" },
      seed: { type: "string" },
      "conf-floor": { type: "string" },
      out: { type: "string" },
    },
  });
  exportAux({
    modelId: requireOption(values.model, "model"),
    dumpPath: requireOption(values.dump, "dump"),
    prompts: splitList(requireOption(values.prompts, "prompts")),
    seed: values.seed ? Number(values.seed) : 0,
    confFloor: values["conf-floor"] ? Number(values["conf-floor"]) : undefined,
    outPath: values.out,
  });
}

function runSimilarity(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      "id-categories": { type: "string" },
      candidates: { type: "string" },
      out: { type: "string" },
    },
  });
  const table = similarityTable(
    splitList(requireOption(values["id-categories"], "id-categories")),
    splitList(requireOption(values.candidates, "candidates")),
  );
  const text = JSON.stringify(table, null, 2) + "\n";
  if (values.out) {
    writeFileSync(values.out, text, "utf-8");
  } else {
    process.stdout.write(text);
  }
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "detect":
        runDetect(rest);
        return 0;
      case "aux":
        runAux(rest);
        return 0;
      case "similarity":
        runSimilarity(rest);
        return 0;
      default:
        process.stderr.write(usage() + "\n");
        return 2;
    }
  } catch (error) {
    const err = error as Error;
    process.stderr.write(
      JSON.stringify({ error: { type: err.name, message: err.message } }) + "\n",
    );
    return 1;
  }
}

if (process.argv[1] && /cli\.(ts|js)$/.test(process.argv[1])) {
  process.exit(main(process.argv.slice(2)));
}
