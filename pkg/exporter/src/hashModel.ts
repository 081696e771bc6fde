/**
 * Deterministic hashed character-n-gram encoder.
 *
 * Every token maps to a fixed-dimension vector by feature-hashing its
 * boundary-marked character trigrams (signed hashing, L2-normalized), and a
 * synthetic sequence-start token summarizes the whole text the same way, so
 * both classification-token and mean pooling are available. No weights, no
 * randomness: the same text always produces the same bytes, offline.
 *
 * Model ids look like "hash-64"; the suffix is the embedding width.
 */

export interface EncodedText {
  /** Per-token vectors, truncation already applied. */
  tokens: Float32Array[];
  /** Sequence-level classification vector. */
  cls: Float32Array;
  /** Number of tokens dropped by the length limit. */
  truncated: number;
}

export interface EncoderModel {
  id: string;
  dim: number;
  hasClsToken: boolean;
  encode(text: string, maxLength: number): EncodedText;
}

const FNV_OFFSET = 0x811c9dc5;
const FNV_PRIME = 0x01000193;

function fnv1a(text: string, seed: number): number {
  let hash = (FNV_OFFSET ^ seed) >>> 0;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, FNV_PRIME) >>> 0;
  }
  return hash >>> 0;
}

function hashNgramsInto(out: Float32Array, text: string, seed: number): void {
  const marked = `^${text}$`;
  const n = 3;
  for (let i = 0; i <= marked.length - n; i++) {
    const gram = marked.slice(i, i + n);
    const h = fnv1a(gram, seed);
    const index = h % out.length;
    const sign = (h & 0x80000000) !== 0 ? -1 : 1;
    out[index] += sign;
  }
}

function normalize(vec: Float32Array): Float32Array {
  let sq = 0;
  for (let j = 0; j < vec.length; j++) sq += vec[j] * vec[j];
  if (sq > 0) {
    const inv = 1 / Math.sqrt(sq);
    for (let j = 0; j < vec.length; j++) vec[j] = Math.fround(vec[j] * inv);
  }
  return vec;
}

export function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^\p{L}\p{N}]+/u)
    .filter((t) => t.length > 0);
}

class HashModel implements EncoderModel {
  readonly id: string;
  readonly dim: number;
  readonly hasClsToken = true;

  constructor(dim: number) {
    this.id = `hash-${dim}`;
    this.dim = dim;
  }

  encode(text: string, maxLength: number): EncodedText {
    const words = tokenize(text);
    const kept = words.slice(0, maxLength);
    const tokens = kept.map((word) => {
      const vec = new Float32Array(this.dim);
      hashNgramsInto(vec, word, 0x7045);
      return normalize(vec);
    });
    const cls = new Float32Array(this.dim);
    hashNgramsInto(cls, kept.join(" "), 0x0c15);
    return { tokens, cls: normalize(cls), truncated: words.length - kept.length };
  }
}

export function loadModel(modelId: string): EncoderModel {
  const match = /^hash-(\d+)$/.exec(modelId);
  if (!match) {
    throw new Error(
      `unknown model '${modelId}'; built-in models are hash-<dim>, e.g. hash-64`,
    );
  }
  const dim = Number(match[1]);
  if (dim < 2 || dim > 4096) {
    throw new Error(`model dimension ${dim} out of range [2, 4096]`);
  }
  return new HashModel(dim);
}
