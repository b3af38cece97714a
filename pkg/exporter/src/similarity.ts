/** Category-name similarity table for proximal proxy selection.
 *
 * Embeds names as L2-normalized character-trigram count vectors and
 * scores pairs by cosine similarity. A lightweight text embedding:
 * deterministic, dependency-free, and good enough to rank lexically and
 * morphologically related category names; swap in a neural text or
 * visual embedding behind the same table format when available.
 */

function trigrams(name: string): Map<string, number> {
  const text = `  ${name.toLowerCase().trim()}  `;
  const counts = new Map<string, number>();
  for (let i = 0; i + 3 <= text.length; i++) {
    const gram = text.slice(i, i + 3);
    counts.set(gram, (counts.get(gram) ?? 0) + 1);
  }
  return counts;
}

export function cosineSimilarity(a: string, b: string): number {
  const ga = trigrams(a);
  const gb = trigrams(b);
  let dot = 0;
  for (const [gram, count] of ga) {
    const other = gb.get(gram);
    if (other) dot += count * other;
  }
  const norm = (g: Map<string, number>) =>
    Math.sqrt([...g.values()].reduce((s, c) => s + c * c, 0));
  const denominator = norm(ga) * norm(gb);
  return denominator === 0 ? 0 : dot / denominator;
}

/** Candidate-major table: {candidate: {id_category: similarity}}. */
export function similarityTable(
  idCategories: string[],
  candidates: string[],
): Record<string, Record<string, number>> {
  const table: Record<string, Record<string, number>> = {};
  for (const candidate of candidates) {
    const row: Record<string, number> = {};
    for (const idCat of idCategories) {
      row[idCat] = cosineSimilarity(candidate, idCat);
    }
    table[candidate] = row;
  }
  return table;
}
