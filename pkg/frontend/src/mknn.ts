export interface ScoredEdge {
  i: number;
  j: number;
  similarity: number;
}

function cosine(a: Float64Array, b: Float64Array): number {
  let s = 0;
  for (let d = 0; d < a.length; d++) s += a[d] * b[d];
  return s;
}

/**
 * Mutual top-K candidate edges over unit-normalized descriptors.
 *
 * Mirrors the estimator core: ties at the K cut go to the lower index, the
 * similarity floor is inclusive, and overflow beyond the cap drops the
 * lowest-similarity edges.
 */
export function mutualTopK(left: Float64Array[], right: Float64Array[],
                           k: number, minSim: number,
                           cap = 1024): ScoredEdge[] {
  if (left.length === 0 || right.length === 0) return [];
  const sims: number[][] = left.map((a) => right.map((b) => cosine(a, b)));
  const topRow = sims.map((row) => topKSet(row, k));
  const cols = right.map((_, j) => sims.map((row) => row[j]));
  const topCol = cols.map((col) => topKSet(col, k));
  let edges: ScoredEdge[] = [];
  for (let i = 0; i < left.length; i++) {
    for (let j = 0; j < right.length; j++) {
      if (topRow[i].has(j) && topCol[j].has(i) && sims[i][j] >= minSim) {
        edges.push({ i, j, similarity: sims[i][j] });
      }
    }
  }
  if (edges.length > cap) {
    edges.sort((a, b) => b.similarity - a.similarity || a.i - b.i || a.j - b.j);
    edges = edges.slice(0, cap);
  }
  edges.sort((a, b) => a.i - b.i || a.j - b.j);
  return edges;
}

function topKSet(values: number[], k: number): Set<number> {
  const order = values.map((v, idx) => idx);
  order.sort((a, b) => values[b] - values[a] || a - b);
  return new Set(order.slice(0, k));
}
