/** Export pipelines: detector -> dump, and open-vocabulary auxiliary
 * detections merged into an existing dump.
 *
 * Dumps are written line by line; merging splices the aux array into
 * each record line textually, so every byte of the existing detections
 * survives untouched.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { loadDetector, loadOpenVocab } from "./backends.js";
import { walkImages } from "./images.js";
import type { Detection, DumpHeader, ImageRecord } from "./types.js";

export const EXPORTER_VERSION = "0.1.0";

export interface ExportOptions {
  modelId: string;
  imagesDir: string;
  layerTag: string;
  confFloor: number;
  seed: number;
  splitKind?: DumpHeader["split_kind"];
  emitHead?: boolean;
}

export function exportDetections(options: ExportOptions): string[] {
  const { modelId, imagesDir, layerTag, confFloor, seed } = options;
  if (!layerTag) {
    throw new Error("a feature layer tag is required (which layer was hooked)");
  }
  const backend = loadDetector(modelId);
  backend.checkLayer(layerTag);
  const images = walkImages(imagesDir);

  const header: DumpHeader = {
    schema_version: "1",
    class_list: backend.classes,
    split_kind: options.splitKind ?? "id_cali",
    feature_dim: backend.featureDim,
    feature_layer: layerTag,
    ...(options.emitHead ? { head: backend.head } : {}),
    meta: {
      exporter: "ood-export",
      exporter_version: EXPORTER_VERSION,
      model: modelId,
      model_version: backend.version,
      seed,
      conf_floor: confFloor,
      n_images: images.length,
    },
  };

  const lines = [JSON.stringify(header)];
  for (const image of images) {
    const detections = backend
      .detect(image, BigInt(seed))
      .filter((d) => d.confidence >= confFloor);
    const record: ImageRecord = {
      image_id: image.id,
      width: image.width,
      height: image.height,
      detections,
    };
    lines.push(JSON.stringify(record));
  }
  return lines;
}

export function writeDump(lines: string[], outPath: string): void {
  writeFileSync(outPath, lines.join("\n") + "\n", "utf-8");
}

export interface AuxOptions {
  modelId: string;
  dumpPath: string;
  prompts: string[];
  seed: number;
  confFloor?: number;
  outPath?: string;
}

/** Run the open-vocabulary model (prompted with the ID class names) over
 * the images of an existing dump and merge the results as
 * aux_detections. Existing detection bytes are preserved exactly. */
export function exportAux(options: AuxOptions): void {
  const { modelId, dumpPath, prompts, seed } = options;
  if (prompts.length === 0) {
    throw new Error("prompt list is empty; pass the ID class names");
  }
  const backend = loadOpenVocab(modelId);
  const raw = readFileSync(dumpPath, "utf-8");
  const lines = raw.split("\n").filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    throw new Error(`${dumpPath}: empty dump`);
  }

  const header = JSON.parse(lines[0]) as DumpHeader;
  header.meta = {
    ...(header.meta ?? {}),
    aux_model: modelId,
    aux_model_version: backend.version,
    aux_prompts: prompts,
    aux_seed: seed,
  };
  const out = [JSON.stringify(header)];

  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    const record = JSON.parse(line) as ImageRecord;
    if (record.aux_detections !== undefined) {
      throw new Error(
        `record '${record.image_id}' already carries aux_detections; refusing to overwrite`,
      );
    }
    const pseudoImage = {
      id: record.image_id,
      path: "",
      width: record.width,
      height: record.height,
      contentHash: hashImageId(record.image_id),
    };
    let aux = backend.detectWithPrompts(pseudoImage, prompts, BigInt(seed));
    if (options.confFloor !== undefined) {
      aux = aux.filter((d) => d.confidence >= options.confFloor!);
    }
    // splice into the original line: every existing byte stays put
    const trimmed = line.trimEnd();
    if (!trimmed.endsWith("}")) {
      throw new Error(`${dumpPath}: record line ${i + 1} is not a JSON object`);
    }
    out.push(
      trimmed.slice(0, -1) + `,"aux_detections":${JSON.stringify(aux)}}`,
    );
  }
  writeFileSync(options.outPath ?? dumpPath, out.join("\n") + "\n", "utf-8");
}

function hashImageId(imageId: string): bigint {
  // aux runs see dump records, not files; key the stream by image_id
  const bytes = new TextEncoder().encode(imageId);
  let hash = 0xcbf29ce484222325n;
  for (const byte of bytes) {
    hash ^= BigInt(byte);
    hash = (hash * 0x100000001b3n) & ((1n << 64n) - 1n);
  }
  return hash;
}

export function recomputeMsp(detection: Detection): number {
  const logits = detection.logits;
  if (!logits || logits.length === 0) {
    throw new Error("detection has no logits");
  }
  const m = Math.max(...logits);
  let sum = 0;
  for (const l of logits) sum += Math.exp(l - m);
  return 1 - 1 / sum;
}
