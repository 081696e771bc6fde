/**
 * Binary writers for the embedding file formats the training harness reads.
 *
 * Layouts (all integers little-endian, vectors float32 row-major):
 *   AEMB: magic "AEMB" | u32 version=1 | u64 count | u32 dim | count*dim f32
 *   ATOK: magic "ATOK" | u32 version=1 | u64 count | u32 dim
 *         | u64 totalTokens | (count+1) u64 offsets | totalTokens*dim f32
 *
 * Files are written to a temp path and renamed into place so a crash never
 * leaves a half-written artifact.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const FORMAT_VERSION = 1;

function atomicWrite(filePath: string, payload: Buffer): void {
  const tmp = filePath + ".tmp";
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, filePath);
}

export function writeEmbeddings(filePath: string, vectors: Float32Array[]): void {
  if (vectors.length === 0) {
    throw new Error("refusing to write an empty embedding file");
  }
  const dim = vectors[0].length;
  const header = Buffer.alloc(4 + 4 + 8 + 4);
  header.write("AEMB", 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeBigUInt64LE(BigInt(vectors.length), 8);
  header.writeUInt32LE(dim, 16);
  const body = Buffer.alloc(vectors.length * dim * 4);
  vectors.forEach((vec, row) => {
    if (vec.length !== dim) {
      throw new Error(`row ${row}: dimension ${vec.length}, expected ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      body.writeFloatLE(vec[j], (row * dim + j) * 4);
    }
  });
  atomicWrite(filePath, Buffer.concat([header, body]));
}

export function writeTokenEmbeddings(
  filePath: string,
  sequences: Float32Array[][],
): void {
  if (sequences.length === 0) {
    throw new Error("refusing to write an empty token file");
  }
  const dim = sequences[0][0].length;
  const totalTokens = sequences.reduce((acc, seq) => acc + seq.length, 0);
  const header = Buffer.alloc(4 + 4 + 8 + 4 + 8);
  header.write("ATOK", 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeBigUInt64LE(BigInt(sequences.length), 8);
  header.writeUInt32LE(dim, 16);
  header.writeBigUInt64LE(BigInt(totalTokens), 20);
  const offsets = Buffer.alloc(8 * (sequences.length + 1));
  let running = 0n;
  offsets.writeBigUInt64LE(0n, 0);
  sequences.forEach((seq, i) => {
    running += BigInt(seq.length);
    offsets.writeBigUInt64LE(running, 8 * (i + 1));
  });
  const body = Buffer.alloc(totalTokens * dim * 4);
  let row = 0;
  for (const seq of sequences) {
    for (const vec of seq) {
      if (vec.length !== dim) {
        throw new Error(`token row ${row}: dimension ${vec.length}, expected ${dim}`);
      }
      for (let j = 0; j < dim; j++) {
        body.writeFloatLE(vec[j], (row * dim + j) * 4);
      }
      row++;
    }
  }
  atomicWrite(filePath, Buffer.concat([header, offsets, body]));
}

/** One `id<TAB>label` line per sample; sequence labels are comma-joined. */
export function writeLabels(filePath: string, labels: string[]): void {
  const lines = labels.map((label, id) => `${id}\t${label}`);
  atomicWrite(filePath, Buffer.from(lines.join("\n") + "\n", "utf-8"));
}

export interface ManifestDoc {
  name: string;
  task: "classification" | "labeling";
  num_classes: number;
  embeddings: string;
  labels: string;
  dim: number;
  count: number;
  token_embeddings?: string;
  model?: string;
  pooling?: string;
}

export function writeManifest(filePath: string, doc: ManifestDoc): void {
  const ordered = Object.fromEntries(
    Object.entries(doc).sort(([a], [b]) => (a < b ? -1 : 1)),
  );
  atomicWrite(filePath, Buffer.from(JSON.stringify(ordered, null, 2) + "\n", "utf-8"));
}

/** Test helper: read back an AEMB file written by this module. */
export function readEmbeddings(filePath: string): {
  count: number;
  dim: number;
  vectors: Float32Array[];
} {
  const raw = fs.readFileSync(filePath);
  if (raw.subarray(0, 4).toString("ascii") !== "AEMB") {
    throw new Error(`${filePath}: bad magic`);
  }
  const count = Number(raw.readBigUInt64LE(8));
  const dim = raw.readUInt32LE(16);
  const vectors: Float32Array[] = [];
  for (let row = 0; row < count; row++) {
    const vec = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      vec[j] = raw.readFloatLE(20 + (row * dim + j) * 4);
    }
    vectors.push(vec);
  }
  return { count, dim, vectors };
}

/** Test helper: read back an ATOK file written by this module. */
export function readTokenEmbeddings(filePath: string): {
  count: number;
  dim: number;
  offsets: number[];
  totalTokens: number;
} {
  const raw = fs.readFileSync(filePath);
  if (raw.subarray(0, 4).toString("ascii") !== "ATOK") {
    throw new Error(`${filePath}: bad magic`);
  }
  const count = Number(raw.readBigUInt64LE(8));
  const dim = raw.readUInt32LE(16);
  const totalTokens = Number(raw.readBigUInt64LE(20));
  const offsets: number[] = [];
  for (let i = 0; i <= count; i++) {
    offsets.push(Number(raw.readBigUInt64LE(28 + 8 * i)));
  }
  return { count, dim, offsets, totalTokens };
}

export function ensureDir(dir: string): void {
  fs.mkdirSync(path.resolve(dir), { recursive: true });
}
