/**
 * Embedding export into the COAPTEMB binary format.
 *
 * Token mode reads a checkpoint JSON holding a subtoken vocabulary with one
 * embedding row per subtoken, tokenizes each requested word by greedy
 * longest-prefix matching, and mean-pools the subtoken rows into a single
 * vector. Image mode reads a JSON map of precomputed named feature vectors
 * and writes them as-is.
 *
 * Layout (little-endian): magic "COAPTEMB", u32 version=1, u8 kind
 * (0=token, 1=image), u32 dim, u32 count, then per record
 * {u16 name_len, UTF-8 name, dim x f32}.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const KIND_TOKEN = 0;
export const KIND_IMAGE = 1;

export interface TokenCheckpoint {
  dim: number;
  tokens: Record<string, number[]>;
}

export interface ExportOutcome {
  written: string[];
  skipped: string[];
}

export function loadTokenCheckpoint(path: string): TokenCheckpoint {
  const doc = JSON.parse(readFileSync(path, "utf-8")) as TokenCheckpoint;
  if (typeof doc.dim !== "number" || doc.dim < 1 || typeof doc.tokens !== "object") {
    throw new Error(`${path}: checkpoint needs a positive 'dim' and a 'tokens' map`);
  }
  for (const [token, row] of Object.entries(doc.tokens)) {
    if (!Array.isArray(row) || row.length !== doc.dim) {
      throw new Error(`${path}: token ${token} row width ${row?.length} != dim ${doc.dim}`);
    }
  }
  return doc;
}

/** Greedy longest-prefix subword split over the checkpoint vocabulary. */
export function tokenizeWord(word: string, vocabulary: Set<string>): string[] {
  const text = word.toLowerCase();
  const pieces: string[] = [];
  let at = 0;
  while (at < text.length) {
    let matched = "";
    for (let end = text.length; end > at; end--) {
      const candidate = text.slice(at, end);
      if (vocabulary.has(candidate)) {
        matched = candidate;
        break;
      }
    }
    if (!matched) {
      return []; // word cannot be covered by the checkpoint vocabulary
    }
    pieces.push(matched);
    at += matched.length;
  }
  return pieces;
}

export function meanPool(rows: number[][], dim: number): Float32Array {
  const out = new Float32Array(dim);
  for (const row of rows) {
    for (let i = 0; i < dim; i++) {
      out[i] += row[i];
    }
  }
  for (let i = 0; i < dim; i++) {
    out[i] = Math.fround(out[i] / rows.length);
  }
  return out;
}

export function writeEmbeddingFile(
  path: string,
  kind: number,
  dim: number,
  records: Map<string, Float32Array>,
): void {
  const chunks: Buffer[] = [];
  chunks.push(Buffer.from("COAPTEMB", "ascii"));
  const header = Buffer.alloc(13);
  header.writeUInt32LE(1, 0);
  header.writeUInt8(kind, 4);
  header.writeUInt32LE(dim, 5);
  header.writeUInt32LE(records.size, 9);
  chunks.push(header);
  for (const [name, vector] of records) {
    if (vector.length !== dim) {
      throw new Error(`record ${name}: width ${vector.length} != dim ${dim}`);
    }
    const nameBytes = Buffer.from(name, "utf-8");
    const lenBuf = Buffer.alloc(2);
    lenBuf.writeUInt16LE(nameBytes.length, 0);
    chunks.push(lenBuf, nameBytes);
    const vecBuf = Buffer.alloc(4 * dim);
    for (let i = 0; i < dim; i++) {
      vecBuf.writeFloatLE(vector[i], 4 * i);
    }
    chunks.push(vecBuf);
  }
  writeFileSync(path, Buffer.concat(chunks));
}

export function readEmbeddingFile(path: string): {
  kind: number;
  dim: number;
  records: Map<string, Float32Array>;
} {
  const raw = readFileSync(path);
  let at = 0;
  const need = (count: number, what: string): Buffer => {
    if (at + count > raw.length) {
      throw new Error(`${path}: truncated ${what} at byte ${at}`);
    }
    const piece = raw.subarray(at, at + count);
    at += count;
    return piece;
  };
  if (!need(8, "magic").equals(Buffer.from("COAPTEMB", "ascii"))) {
    throw new Error(`${path}: bad magic at byte 0`);
  }
  const header = need(13, "header");
  const version = header.readUInt32LE(0);
  if (version !== 1) {
    throw new Error(`${path}: unsupported version ${version}`);
  }
  const kind = header.readUInt8(4);
  const dim = header.readUInt32LE(5);
  const count = header.readUInt32LE(9);
  const records = new Map<string, Float32Array>();
  for (let r = 0; r < count; r++) {
    const nameLen = need(2, "name length").readUInt16LE(0);
    const name = need(nameLen, "name").toString("utf-8");
    const vecBuf = need(4 * dim, `vector for ${name}`);
    const vector = new Float32Array(dim);
    for (let i = 0; i < dim; i++) {
      vector[i] = vecBuf.readFloatLE(4 * i);
    }
    records.set(name, vector);
  }
  return { kind, dim, records };
}

export function exportTokenEmbeddings(
  checkpointPath: string,
  words: string[],
  outPath: string,
): ExportOutcome {
  const checkpoint = loadTokenCheckpoint(checkpointPath);
  const vocabulary = new Set(Object.keys(checkpoint.tokens).map((t) => t.toLowerCase()));
  const records = new Map<string, Float32Array>();
  const skipped: string[] = [];
  for (const word of words) {
    const pieces = tokenizeWord(word, vocabulary);
    if (pieces.length === 0) {
      console.warn(`warning: word ${JSON.stringify(word)} produced zero tokens; skipped`);
      skipped.push(word);
      continue;
    }
    const rows = pieces.map((p) => checkpoint.tokens[p]);
    records.set(word, meanPool(rows, checkpoint.dim));
  }
  writeEmbeddingFile(outPath, KIND_TOKEN, checkpoint.dim, records);
  return { written: [...records.keys()], skipped };
}

export function exportImageFeatures(featuresPath: string, outPath: string): ExportOutcome {
  const doc = JSON.parse(readFileSync(featuresPath, "utf-8")) as Record<string, number[]>;
  const names = Object.keys(doc);
  if (names.length === 0) {
    throw new Error(`${featuresPath}: no feature vectors found`);
  }
  const dim = doc[names[0]].length;
  const records = new Map<string, Float32Array>();
  for (const name of names) {
    const row = doc[name];
    if (!Array.isArray(row) || row.length !== dim) {
      throw new Error(`${featuresPath}: feature ${name} width ${row?.length} != ${dim}`);
    }
    records.set(name, Float32Array.from(row, Math.fround));
  }
  writeEmbeddingFile(outPath, KIND_IMAGE, dim, records);
  return { written: names, skipped: [] };
}
