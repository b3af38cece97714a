/** Thin folder walker: finds image files and reads their pixel
 * dimensions from the container headers (no decoding).
 */

import { readFileSync, readdirSync, statSync } from "node:fs";
import { extname, join } from "node:path";

import { fnv1a64 } from "./prng.js";

export interface ImageInfo {
  /** path relative to the walked root, '/'-separated */
  id: string;
  path: string;
  width: number;
  height: number;
  /** FNV-1a of the file bytes; keys the per-image RNG stream */
  contentHash: bigint;
}

const IMAGE_EXTENSIONS = new Set([".png", ".jpg", ".jpeg"]);

export function readPngSize(data: Uint8Array): { width: number; height: number } {
  const signature = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
  if (data.length < 24 || !signature.every((b, i) => data[i] === b)) {
    throw new Error("not a PNG file");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  return { width: view.getUint32(16), height: view.getUint32(20) };
}

export function readJpegSize(data: Uint8Array): { width: number; height: number } {
  if (data.length < 4 || data[0] !== 0xff || data[1] !== 0xd8) {
    throw new Error("not a JPEG file");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  let offset = 2;
  while (offset + 9 < data.length) {
    if (data[offset] !== 0xff) {
      offset += 1;
      continue;
    }
    const marker = data[offset + 1];
    // SOF0/1/2 carry the frame dimensions
    if (marker >= 0xc0 && marker <= 0xc2) {
      return {
        height: view.getUint16(offset + 5),
        width: view.getUint16(offset + 7),
      };
    }
    if (marker === 0xd8 || (marker >= 0xd0 && marker <= 0xd9)) {
      offset += 2;
      continue;
    }
    offset += 2 + view.getUint16(offset + 2);
  }
  throw new Error("JPEG frame header not found");
}

export function readImageInfo(path: string, id: string): ImageInfo {
  const data = readFileSync(path);
  const bytes = new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
  const ext = extname(path).toLowerCase();
  const size = ext === ".png" ? readPngSize(bytes) : readJpegSize(bytes);
  return { id, path, ...size, contentHash: fnv1a64(bytes) };
}

/** Images under `root` (recursive), sorted by id for stable output. */
export function walkImages(root: string): ImageInfo[] {
  const out: ImageInfo[] = [];
  const walk = (dir: string, prefix: string) => {
    for (const name of readdirSync(dir).sort()) {
      const full = join(dir, name);
      const rel = prefix ? `${prefix}/${name}` : name;
      if (statSync(full).isDirectory()) {
        walk(full, rel);
      } else if (IMAGE_EXTENSIONS.has(extname(name).toLowerCase())) {
        out.push(readImageInfo(full, rel));
      }
    }
  };
  walk(root, "");
  out.sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
  return out;
}
