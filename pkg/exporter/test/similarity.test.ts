import { describe, expect, it } from "vitest";

import { cosineSimilarity, similarityTable } from "../src/similarity.js";

describe("cosineSimilarity", () => {
  it("identical names score 1", () => {
    expect(cosineSimilarity("horse", "horse")).toBeCloseTo(1.0, 12);
    expect(cosineSimilarity("Horse", "horse")).toBeCloseTo(1.0, 12);
  });

  it("related names beat unrelated names", () => {
    const related = cosineSimilarity("motorcycle", "motorbike");
    const unrelated = cosineSimilarity("motorcycle", "fern");
    expect(related).toBeGreaterThan(unrelated);
  });

  it("is symmetric and bounded", () => {
    const pairs: Array<[string, string]> = [
      ["car", "cart"],
      ["person", "parsnip"],
      ["kayak", "bicycle"],
    ];
    for (const [a, b] of pairs) {
      const ab = cosineSimilarity(a, b);
      expect(ab).toBeCloseTo(cosineSimilarity(b, a), 12);
      expect(ab).toBeGreaterThanOrEqual(0);
      expect(ab).toBeLessThanOrEqual(1 + 1e-12);
    }
  });
});

describe("similarityTable", () => {
  it("is candidate-major with one score per (id, candidate) pair", () => {
    const table = similarityTable(["car", "person"], ["cart", "statue"]);
    expect(Object.keys(table)).toEqual(["cart", "statue"]);
    expect(Object.keys(table.cart)).toEqual(["car", "person"]);
    expect(table.cart.car).toBeGreaterThan(table.statue.car);
  });
});
