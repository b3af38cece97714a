/** Detector backends.
 *
 * A backend turns one image into raw detections (boxes, logits,
 * background logit, per-box features). Model ids are pinned in
 * models.lock.json; the resolved version is recorded into the dump
 * metadata so dumps stay traceable to the exact model.
 *
 * The synthetic backends are deterministic functions of (model config,
 * seed, image content hash); they exist so the full export pipeline is
 * exercisable offline and double as the test harness. Real-model
 * backends plug in behind the same interface.
 */

import { readFileSync } from "node:fs";

import { CounterRng } from "./prng.js";
import type { Detection, ImageRecord, LinearHead } from "./types.js";
import type { ImageInfo } from "./images.js";

export interface DetectorBackend {
  modelId: string;
  version: string;
  classes: string[];
  featureDim: number;
  head: LinearHead;
  detect(image: ImageInfo, seed: bigint): Detection[];
}

export interface OpenVocabBackend {
  modelId: string;
  version: string;
  detectWithPrompts(image: ImageInfo, prompts: string[], seed: bigint): Detection[];
}

interface LockEntry {
  kind: string;
  version: string;
  classes?: string[];
  feature_dim?: number;
  weight_seed?: number;
  supported_layers?: string[];
  distractors?: string[];
}

function loadLock(): Record<string, LockEntry> {
  const url = new URL("../models.lock.json", import.meta.url);
  return JSON.parse(readFileSync(url, "utf-8"));
}

function lockEntry(modelId: string, kind: string): LockEntry {
  const lock = loadLock();
  const entry = lock[modelId];
  if (!entry) {
    const known = Object.keys(lock).join(", ");
    throw new Error(`unknown model id '${modelId}' (lockfile knows: ${known})`);
  }
  if (entry.kind !== kind) {
    throw new Error(`model '${modelId}' is a ${entry.kind} model, expected ${kind}`);
  }
  return entry;
}

const f32 = Math.fround;

function f32Vec(values: number[]): number[] {
  return values.map(f32);
}

function randomBox(rng: CounterRng, width: number, height: number) {
  const w = rng.uniform(Math.min(8, width / 4), Math.max(9, width / 3));
  const h = rng.uniform(Math.min(8, height / 4), Math.max(9, height / 3));
  const x1 = rng.uniform(0, Math.max(1e-3, width - w));
  const y1 = rng.uniform(0, Math.max(1e-3, height - h));
  return {
    x1: f32(x1),
    y1: f32(y1),
    x2: f32(Math.min(x1 + w, width)),
    y2: f32(Math.min(y1 + h, height)),
  };
}

function maxSoftmax(logits: number[]): number {
  const m = Math.max(...logits);
  let sum = 0;
  for (const l of logits) sum += Math.exp(l - m);
  return 1 / sum; // exp(m - m) / sum
}

/** Deterministic toy detector: class anchors in feature space, a fixed
 * linear head, per-image draws keyed by the image's content hash. */
class SyntheticDetector implements DetectorBackend {
  readonly classes: string[];
  readonly featureDim: number;
  readonly head: LinearHead;
  readonly version: string;
  private readonly anchors: number[][];
  private readonly supportedLayers: string[];

  constructor(readonly modelId: string) {
    const entry = lockEntry(modelId, "detector");
    this.classes = entry.classes!;
    this.featureDim = entry.feature_dim!;
    this.version = entry.version;
    this.supportedLayers = entry.supported_layers ?? [];

    const wrng = new CounterRng(BigInt(entry.weight_seed ?? 1), 0n);
    this.anchors = this.classes.map(() => {
      const a = Array.from({ length: this.featureDim }, () => 3.0 * wrng.normal());
      return a;
    });
    this.head = {
      weight: this.anchors.map((a) => f32Vec(a.map((x) => x / 3.0))),
      bias: f32Vec(this.classes.map(() => 0.1 * wrng.normal())),
    };
  }

  checkLayer(layerTag: string): void {
    if (!this.supportedLayers.includes(layerTag)) {
      throw new Error(
        `model '${this.modelId}' has no feature hook for layer '${layerTag}' ` +
          `(supported: ${this.supportedLayers.join(", ")})`,
      );
    }
  }

  detect(image: ImageInfo, seed: bigint): Detection[] {
    const rng = new CounterRng(seed, image.contentHash);
    const n = rng.int(0, 4);
    const detections: Detection[] = [];
    for (let i = 0; i < n; i++) {
      const trueClass = rng.int(0, this.classes.length - 1);
      const feature = f32Vec(
        this.anchors[trueClass].map((a) => a + rng.normal()),
      );
      const logits = f32Vec(
        this.head.weight.map((row, k) => {
          let act = this.head.bias[k];
          for (let j = 0; j < row.length; j++) act += row[j] * feature[j];
          return act;
        }),
      );
      let classId = 0;
      for (let k = 1; k < logits.length; k++) {
        if (logits[k] > logits[classId]) classId = k;
      }
      // reported confidence is exactly the max softmax of the emitted
      // (float32) logits, so downstream re-scoring reproduces it
      const confidence = f32(maxSoftmax(logits));
      detections.push({
        box: randomBox(rng, image.width, image.height),
        class_id: classId,
        class_name: this.classes[classId],
        confidence,
        logits,
        bg_logit: f32(rng.normal() - 1.0),
        feature,
      });
    }
    return detections;
  }
}

/** Deterministic toy open-vocabulary detector: emits a mix of prompt
 * classes and lockfile distractor classes. */
class SyntheticOpenVocab implements OpenVocabBackend {
  readonly version: string;
  private readonly distractors: string[];

  constructor(readonly modelId: string) {
    const entry = lockEntry(modelId, "open_vocabulary");
    this.version = entry.version;
    this.distractors = entry.distractors ?? [];
  }

  detectWithPrompts(image: ImageInfo, prompts: string[], seed: bigint): Detection[] {
    // decorrelate from the detector stream on the same image
    const rng = new CounterRng(seed, image.contentHash ^ 0xa5a5a5a5a5a5a5a5n);
    const vocabulary = [...prompts, ...this.distractors];
    const n = rng.int(0, 3);
    const detections: Detection[] = [];
    for (let i = 0; i < n; i++) {
      const usePrompt = rng.float() < 0.35;
      const name = usePrompt ? rng.pick(prompts) : rng.pick(this.distractors);
      detections.push({
        box: randomBox(rng, image.width, image.height),
        class_id: vocabulary.indexOf(name),
        class_name: name,
        confidence: f32(rng.uniform(0.05, 0.99)),
      });
    }
    return detections;
  }
}

export function loadDetector(modelId: string): SyntheticDetector {
  if (!modelId.startsWith("synth-det")) {
    throw new Error(
      `no backend for model '${modelId}'; only synthetic detector backends ` +
        "are bundled (real-model backends implement DetectorBackend)",
    );
  }
  return new SyntheticDetector(modelId);
}

export function loadOpenVocab(modelId: string): SyntheticOpenVocab {
  if (!modelId.startsWith("synth-ov")) {
    throw new Error(`no open-vocabulary backend for model '${modelId}'`);
  }
  return new SyntheticOpenVocab(modelId);
}
