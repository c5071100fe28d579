/** Pure response-to-view mappings. The UI does no similarity math and no
 * re-sorting: rows appear exactly in service order. */

import type { QueryResponse, ResultEntry } from "./types.js";

export interface ResultRow {
  id: string;
  similarityText: string;
  classText: string;
  typeText: string;
  tags: string;
  thumbnail: string;
}

export function resultRows(response: QueryResponse): ResultRow[] {
  return response.results.map((entry: ResultEntry) => ({
    id: entry.id,
    similarityText: entry.similarity.toFixed(4),
    classText: entry.class_label === null ? "-" : String(entry.class_label),
    typeText: entry.type_label === null ? "-" : String(entry.type_label),
    tags: entry.tags.join(", "),
    thumbnail: entry.thumbnail,
  }));
}

export function scoreText(score: number): string {
  return score.toFixed(3);
}

export function pValueText(p: number): string {
  if (p === 0) {
    return "0";
  }
  return p >= 1e-3 ? p.toFixed(4) : p.toExponential(2);
}
