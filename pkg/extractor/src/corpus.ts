/**
 * Line-delimited corpus parsing, matching the retrieval engine's format:
 * one JSON record per line, instructions and tools mixed, distinguished
 * by a "kind" field.
 */

import { readFileSync } from "node:fs";

export interface InstructionRecord {
  kind: "instruction";
  id: string;
  text: string;
  toolIds: string[];
}

export interface ToolRecord {
  kind: "tool";
  id: string;
  name: string;
  description: string;
}

export interface Corpus {
  instructions: InstructionRecord[];
  tools: ToolRecord[];
}

export class DataError extends Error {}

/** Text fed to the encoder for a tool: name and description, newline-joined. */
export function toolDocument(tool: ToolRecord): string {
  return `${tool.name}\n${tool.description}`;
}

function asString(value: unknown, context: string): string {
  if (typeof value !== "string") {
    throw new DataError(`${context}: expected a string`);
  }
  return value;
}

export function parseCorpus(path: string): Corpus {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new DataError(`cannot read corpus ${path}: ${(err as Error).message}`);
  }
  const instructions: InstructionRecord[] = [];
  const tools: ToolRecord[] = [];
  const seen = new Set<string>();
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const where = `${path}:${i + 1}`;
    let obj: Record<string, unknown>;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new DataError(`${where}: malformed record: ${(err as Error).message}`);
    }
    const kind = obj.kind;
    if (kind === "instruction") {
      const rec: InstructionRecord = {
        kind: "instruction",
        id: asString(obj.id, `${where}: id`),
        text: asString(obj.text, `${where}: text`),
        toolIds: Array.isArray(obj.tool_ids)
          ? obj.tool_ids.map((t, j) => asString(t, `${where}: tool_ids[${j}]`))
          : [],
      };
      if (seen.has(rec.id)) throw new DataError(`${where}: duplicate id '${rec.id}'`);
      seen.add(rec.id);
      instructions.push(rec);
    } else if (kind === "tool") {
      const rec: ToolRecord = {
        kind: "tool",
        id: asString(obj.id, `${where}: id`),
        name: asString(obj.name, `${where}: name`),
        description: asString(obj.description, `${where}: description`),
      };
      if (seen.has(rec.id)) throw new DataError(`${where}: duplicate id '${rec.id}'`);
      seen.add(rec.id);
      tools.push(rec);
    } else {
      throw new DataError(`${where}: unknown record kind '${String(kind)}'`);
    }
  }
  const toolIds = new Set(tools.map((t) => t.id));
  const dangling = new Set<string>();
  for (const rec of instructions) {
    for (const t of rec.toolIds) if (!toolIds.has(t)) dangling.add(t);
  }
  if (dangling.size > 0) {
    throw new DataError(
      `${path}: unresolved tool ids: ${[...dangling].sort().join(", ")}`,
    );
  }
  return { instructions, tools };
}
