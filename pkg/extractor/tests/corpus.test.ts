import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { parseCorpus, toolDocument } from "../src/corpus.js";

function corpusFile(lines: string[]): string {
  const path = join(mkdtempSync(join(tmpdir(), "corpus-")), "corpus.jsonl");
  writeFileSync(path, lines.join("\n") + "\n");
  return path;
}

describe("corpus parsing", () => {
  it("reads instructions and tools", () => {
    const path = corpusFile([
      JSON.stringify({ kind: "tool", id: "t0", name: "resizer", description: "scales images" }),
      JSON.stringify({ kind: "instruction", id: "q0", text: "resize this", tool_ids: ["t0"] }),
    ]);
    const corpus = parseCorpus(path);
    expect(corpus.instructions).toHaveLength(1);
    expect(corpus.tools).toHaveLength(1);
    expect(corpus.instructions[0].toolIds).toEqual(["t0"]);
  });

  it("joins tool name and description with a newline", () => {
    expect(
      toolDocument({ kind: "tool", id: "t", name: "mailer", description: "sends mail" }),
    ).toBe("mailer\nsends mail");
  });

  it("reports malformed lines with their number", () => {
    const path = corpusFile([
      JSON.stringify({ kind: "tool", id: "t0", name: "a", description: "b" }),
      "{oops",
    ]);
    expect(() => parseCorpus(path)).toThrow(/:2: malformed/);
  });

  it("rejects duplicate ids", () => {
    const path = corpusFile([
      JSON.stringify({ kind: "tool", id: "t0", name: "a", description: "b" }),
      JSON.stringify({ kind: "tool", id: "t0", name: "c", description: "d" }),
    ]);
    expect(() => parseCorpus(path)).toThrow(/duplicate id 't0'/);
  });

  it("rejects dangling tool references", () => {
    const path = corpusFile([
      JSON.stringify({ kind: "instruction", id: "q0", text: "x", tool_ids: ["ghost"] }),
    ]);
    expect(() => parseCorpus(path)).toThrow(/unresolved tool ids: ghost/);
  });

  it("accepts an empty file", () => {
    const path = corpusFile([]);
    const corpus = parseCorpus(path);
    expect(corpus.instructions).toEqual([]);
    expect(corpus.tools).toEqual([]);
  });
});
