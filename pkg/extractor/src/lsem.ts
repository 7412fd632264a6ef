/**
 * The binary embedding file format the retrieval engine reads ("LSEM"):
 * 4-byte magic, u16 version, u64 row count, u32 dim (all little-endian),
 * a row-major float32 payload, and a footer of length-prefixed UTF-8
 * external ids, one per row in row order.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = "LSEM";
export const VERSION = 1;

export class FormatError extends Error {}

export function encodeEmbeddings(rows: number[][], ids: string[]): Buffer {
  if (rows.length !== ids.length) {
    throw new FormatError(`${ids.length} ids for ${rows.length} rows`);
  }
  if (new Set(ids).size !== ids.length) {
    throw new FormatError("embedding ids must be unique");
  }
  const dim = rows.length > 0 ? rows[0].length : 0;
  for (const row of rows) {
    if (row.length !== dim) {
      throw new FormatError(`ragged rows: ${row.length} != ${dim}`);
    }
  }
  const header = Buffer.alloc(4 + 2 + 8 + 4);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt16LE(VERSION, 4);
  header.writeBigUInt64LE(BigInt(rows.length), 6);
  header.writeUInt32LE(dim, 14);

  const payload = Buffer.alloc(rows.length * dim * 4);
  let offset = 0;
  for (const row of rows) {
    for (const value of row) {
      payload.writeFloatLE(Math.fround(value), offset);
      offset += 4;
    }
  }

  const footerParts: Buffer[] = [];
  for (const id of ids) {
    const utf8 = Buffer.from(id, "utf-8");
    const len = Buffer.alloc(4);
    len.writeUInt32LE(utf8.length, 0);
    footerParts.push(len, utf8);
  }
  return Buffer.concat([header, payload, ...footerParts]);
}

export function writeEmbeddings(
  path: string,
  rows: number[][],
  ids: string[],
): void {
  writeFileSync(path, encodeEmbeddings(rows, ids));
}

export interface EmbeddingFile {
  rows: number[][];
  ids: string[];
  dim: number;
}

export function readEmbeddings(path: string): EmbeddingFile {
  const data = readFileSync(path);
  if (data.length < 4 || data.toString("ascii", 0, 4) !== MAGIC) {
    throw new FormatError(`${path}: bad magic at offset 0`);
  }
  if (data.length < 18) {
    throw new FormatError(`${path}: truncated header at offset ${data.length}`);
  }
  const version = data.readUInt16LE(4);
  if (version !== VERSION) {
    throw new FormatError(`${path}: unsupported version ${version} at offset 4`);
  }
  const rowCount = Number(data.readBigUInt64LE(6));
  const dim = data.readUInt32LE(14);
  let offset = 18;
  const payloadBytes = rowCount * dim * 4;
  if (data.length < offset + payloadBytes) {
    throw new FormatError(`${path}: truncated payload at offset ${data.length}`);
  }
  const rows: number[][] = [];
  for (let r = 0; r < rowCount; r++) {
    const row = new Array<number>(dim);
    for (let d = 0; d < dim; d++) {
      row[d] = data.readFloatLE(offset);
      offset += 4;
    }
    rows.push(row);
  }
  const ids: string[] = [];
  for (let r = 0; r < rowCount; r++) {
    if (data.length < offset + 4) {
      throw new FormatError(`${path}: truncated id footer at offset ${offset}`);
    }
    const len = data.readUInt32LE(offset);
    offset += 4;
    if (data.length < offset + len) {
      throw new FormatError(`${path}: truncated id footer at offset ${offset}`);
    }
    ids.push(data.toString("utf-8", offset, offset + len));
    offset += len;
  }
  if (offset !== data.length) {
    throw new FormatError(`${path}: trailing bytes at offset ${offset}`);
  }
  return { rows, ids, dim };
}
