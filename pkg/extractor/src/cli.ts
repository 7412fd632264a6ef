#!/usr/bin/env node
/**
 * toolgraph-extract: embed corpus texts into the engine's .lsem format.
 *
 * Exit codes mirror the engine CLI: 0 ok, 1 usage, 2 data/encoder error,
 * 3 internal error.
 */

import { DataError } from "./corpus.js";
import { EncoderError, type EncoderSpec } from "./encoders.js";
import { FormatError } from "./lsem.js";
import { extract } from "./extract.js";
import type { Pooling } from "./pooling.js";

const USAGE = `usage: toolgraph-extract --corpus FILE --model ID --out FILE
                         [--pool mean|cls] [--dim N] [--batch-size N]
                         [--max-length N]

models: any transformers.js feature-extraction checkpoint
        (e.g. Xenova/all-MiniLM-L6-v2), or local-hash:<dim> for the
        deterministic offline backend`;

class UsageError extends Error {}

function parseArgs(argv: string[]): { corpus: string; out: string; spec: EncoderSpec } {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new UsageError(`unexpected argument '${arg}'`);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new UsageError(`flag ${arg} needs a value`);
    }
    flags.set(arg.slice(2), value);
    i++;
  }
  const required = ["corpus", "model", "out"];
  for (const name of required) {
    if (!flags.has(name)) throw new UsageError(`missing --${name}`);
  }
  const pooling = flags.get("pool") ?? "mean";
  if (pooling !== "mean" && pooling !== "cls") {
    throw new UsageError(`--pool must be mean or cls, got '${pooling}'`);
  }
  const intFlag = (name: string, fallback: number | undefined): number | undefined => {
    const raw = flags.get(name);
    if (raw === undefined) return fallback;
    const value = Number(raw);
    if (!Number.isInteger(value) || value < 1) {
      throw new UsageError(`--${name} must be a positive integer`);
    }
    return value;
  };
  return {
    corpus: flags.get("corpus")!,
    out: flags.get("out")!,
    spec: {
      model: flags.get("model")!,
      pooling: pooling as Pooling,
      batchSize: intFlag("batch-size", 32)!,
      maxLength: intFlag("max-length", 256)!,
      dim: intFlag("dim", undefined),
    },
  };
}

export async function runCli(argv: string[]): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`toolgraph-extract: ${err.message}\n${USAGE}`);
      return 1;
    }
    throw err;
  }
  try {
    const summary = await extract(parsed.corpus, parsed.spec, parsed.out);
    console.log(
      `extract: ${summary.rows} rows, dim ${summary.dim}, ` +
        `model ${summary.model} -> ${parsed.out}`,
    );
    return 0;
  } catch (err) {
    if (
      err instanceof DataError ||
      err instanceof EncoderError ||
      err instanceof FormatError
    ) {
      console.error(`toolgraph-extract: ${err.message}`);
      return 2;
    }
    console.error(`toolgraph-extract: internal error: ${(err as Error).stack}`);
    return 3;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;

if (invokedDirectly) {
  runCli(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
