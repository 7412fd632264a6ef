/**
 * Batch extraction: corpus in, embedding file out. One row per record,
 * instruction rows first in corpus order, then tool rows; every row is
 * L2-normalized before the float32 cast.
 */

import { parseCorpus, toolDocument, DataError } from "./corpus.js";
import { makeEncoder, type EncoderSpec } from "./encoders.js";
import { l2Normalize } from "./pooling.js";
import { writeEmbeddings } from "./lsem.js";

export interface ExtractSummary {
  rows: number;
  dim: number;
  ids: string[];
  model: string;
}

export async function extract(
  corpusPath: string,
  spec: EncoderSpec,
  outPath: string,
): Promise<ExtractSummary> {
  const corpus = parseCorpus(corpusPath);
  const ids: string[] = [];
  const texts: string[] = [];
  for (const rec of corpus.instructions) {
    ids.push(rec.id);
    texts.push(rec.text);
  }
  for (const rec of corpus.tools) {
    ids.push(rec.id);
    texts.push(toolDocument(rec));
  }

  const encoder = makeEncoder(spec);
  const rows: number[][] = [];
  for (let start = 0; start < texts.length; start += spec.batchSize) {
    const batch = texts.slice(start, start + spec.batchSize);
    for (const vector of await encoder.encodeBatch(batch)) {
      rows.push(l2Normalize(vector));
    }
  }

  const dim = rows.length > 0 ? rows[0].length : spec.dim ?? 0;
  for (const row of rows) {
    if (row.length !== dim) {
      throw new DataError(`encoder emitted ragged rows (${row.length} != ${dim})`);
    }
  }
  if (spec.dim !== undefined && rows.length > 0 && dim !== spec.dim) {
    throw new DataError(
      `dimension mismatch: encoder '${encoder.name}' emits ${dim}, expected ${spec.dim}`,
    );
  }
  writeEmbeddings(outPath, rows, ids);
  return { rows: rows.length, dim, ids, model: encoder.name };
}
