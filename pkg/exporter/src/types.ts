/** Wire-format types for the detection dump (schema_version "1").
 *
 * The dump is line-delimited JSON: one header object, then one image
 * record per line. Field names and semantics are owned by the ood-audit
 * toolkit; this exporter only ever writes them.
 */

export interface BoundingBox {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface Detection {
  box: BoundingBox;
  class_id: number;
  class_name: string;
  confidence: number;
  logits?: number[];
  bg_logit?: number;
  feature?: number[];
}

export interface GroundTruthObject {
  box: BoundingBox;
  class_name: string;
  is_ood: boolean;
}

export interface ImageRecord {
  image_id: string;
  width: number;
  height: number;
  detections: Detection[];
  ground_truth?: GroundTruthObject[];
  aux_detections?: Detection[];
}

export interface LinearHead {
  weight: number[][];
  bias: number[];
}

export interface DumpHeader {
  schema_version: "1";
  class_list: string[];
  split_kind: "id_train" | "id_cali" | "id_test" | "ood_test" | "candidate";
  feature_dim?: number;
  feature_layer?: string;
  head?: LinearHead;
  meta?: Record<string, unknown>;
}
