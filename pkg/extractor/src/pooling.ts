/** Pooling over per-token embeddings and vector normalization. */

export type Pooling = "mean" | "cls";

export function meanPool(tokens: number[][]): number[] {
  if (tokens.length === 0) throw new Error("cannot pool zero tokens");
  const dim = tokens[0].length;
  const out = new Array<number>(dim).fill(0);
  for (const token of tokens) {
    for (let d = 0; d < dim; d++) out[d] += token[d];
  }
  for (let d = 0; d < dim; d++) out[d] /= tokens.length;
  return out;
}

export function clsPool(tokens: number[][]): number[] {
  if (tokens.length === 0) throw new Error("cannot pool zero tokens");
  return [...tokens[0]];
}

export function pool(tokens: number[][], pooling: Pooling): number[] {
  return pooling === "mean" ? meanPool(tokens) : clsPool(tokens);
}

/** L2-normalize in place-ish; zero vectors stay zero. */
export function l2Normalize(vector: number[]): number[] {
  let sumSquares = 0;
  for (const v of vector) sumSquares += v * v;
  const norm = Math.sqrt(sumSquares);
  if (norm === 0) return [...vector];
  return vector.map((v) => v / norm);
}
