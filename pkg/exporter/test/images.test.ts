import { mkdirSync, mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { readJpegSize, readPngSize, walkImages } from "../src/images.js";
import { makeJpegHeader, makePng } from "./fixtures.js";

describe("dimension readers", () => {
  it("reads PNG IHDR dimensions", () => {
    const png = makePng(123, 45);
    expect(readPngSize(new Uint8Array(png))).toEqual({ width: 123, height: 45 });
  });

  it("reads JPEG SOF dimensions", () => {
    const jpeg = makeJpegHeader(320, 240);
    expect(readJpegSize(new Uint8Array(jpeg))).toEqual({ width: 320, height: 240 });
  });

  it("rejects non-image bytes", () => {
    const junk = new Uint8Array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    expect(() => readPngSize(junk)).toThrow(/PNG/);
    expect(() => readJpegSize(junk)).toThrow(/JPEG/);
  });
});

describe("walkImages", () => {
  it("finds images recursively, sorted, with stable relative ids", () => {
    const root = mkdtempSync(join(tmpdir(), "walk-"));
    mkdirSync(join(root, "sub"));
    writeFileSync(join(root, "b.png"), makePng(10, 10, 1));
    writeFileSync(join(root, "sub", "a.png"), makePng(20, 30, 2));
    writeFileSync(join(root, "notes.txt"), "not an image");
    const images = walkImages(root);
    expect(images.map((i) => i.id)).toEqual(["b.png", "sub/a.png"]);
    expect(images[1].width).toBe(20);
    expect(images[1].height).toBe(30);
    expect(images[0].contentHash).not.toBe(images[1].contentHash);
  });
});
