export { parseCorpus, toolDocument, DataError } from "./corpus.js";
export type { Corpus, InstructionRecord, ToolRecord } from "./corpus.js";
export {
  encodeEmbeddings,
  readEmbeddings,
  writeEmbeddings,
  FormatError,
  MAGIC,
  VERSION,
} from "./lsem.js";
export { clsPool, l2Normalize, meanPool, pool } from "./pooling.js";
export type { Pooling } from "./pooling.js";
export {
  EncoderError,
  LocalHashEncoder,
  TransformersEncoder,
  makeEncoder,
} from "./encoders.js";
export type { Encoder, EncoderSpec } from "./encoders.js";
export { extract } from "./extract.js";
export type { ExtractSummary } from "./extract.js";
export { runCli } from "./cli.js";
