/**
 * One-shot export: read a plain-text TSV corpus, encode every row with the
 * configured model, and write the embedding/labels/manifest files the
 * training harness ingests.
 *
 * Input rows are `id<TAB>text[<TAB>text2]<TAB>label`. Sentence pairs are
 * joined into one sequence and produce a single vector. A label with commas
 * marks a pre-tokenized labeling row: the text is split on whitespace and
 * labels must align one-to-one with the kept tokens.
 *
 * Output ids are dense row indices in input order.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  ensureDir,
  readEmbeddings,
  readTokenEmbeddings,
  writeEmbeddings,
  writeLabels,
  writeManifest,
  writeTokenEmbeddings,
} from "./format.js";
import { EncoderModel, loadModel } from "./hashModel.js";

export type PoolingRule = "cls_token" | "mean_pool";

export interface ExportJob {
  inputPath: string;
  modelId: string;
  pooling: PoolingRule;
  outDir: string;
  writeTokens: boolean;
  batchSize: number;
  maxLength: number;
  name?: string;
  spotCheck: number;
}

export interface ExportSummary {
  manifestPath: string;
  count: number;
  dim: number;
  task: "classification" | "labeling";
  truncatedTexts: number;
}

interface ParsedRow {
  line: number;
  sourceId: string;
  text: string;
  label: string;
}

function parseTsv(inputPath: string): ParsedRow[] {
  const rows: ParsedRow[] = [];
  const seen = new Set<string>();
  const lines = fs.readFileSync(inputPath, "utf-8").split("\n");
  lines.forEach((raw, index) => {
    const line = index + 1;
    if (raw === "" && index === lines.length - 1) return; // trailing newline
    const parts = raw.split("\t");
    if (parts.length < 3 || parts.length > 4) {
      throw new Error(
        `${inputPath}:${line}: expected 3 or 4 tab-separated fields, got ${parts.length}`,
      );
    }
    const [sourceId, ...rest] = parts;
    const label = rest.pop() as string;
    const text = rest.join(" "); // pair rows collapse to one joint sequence
    if (text.trim() === "") {
      throw new Error(`${inputPath}:${line}: empty text`);
    }
    if (seen.has(sourceId)) {
      throw new Error(`${inputPath}:${line}: duplicate id '${sourceId}'`);
    }
    seen.add(sourceId);
    rows.push({ line, sourceId, text, label });
  });
  if (rows.length === 0) {
    throw new Error(`${inputPath}: no rows`);
  }
  return rows;
}

function meanPool(tokens: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(dim);
  for (const tok of tokens) {
    for (let j = 0; j < dim; j++) out[j] += tok[j];
  }
  for (let j = 0; j < dim; j++) out[j] = Math.fround(out[j] / tokens.length);
  return out;
}

function checkClasses(labels: string[], file: string): number {
  let maxLabel = -1;
  labels.forEach((label) => {
    for (const piece of label.split(",")) {
      const value = Number(piece);
      if (!Number.isInteger(value) || value < 0) {
        throw new Error(`${file}: label '${piece}' is not a non-negative integer`);
      }
      maxLabel = Math.max(maxLabel, value);
    }
  });
  return maxLabel + 1;
}

export function runExport(job: ExportJob): ExportSummary {
  const model: EncoderModel = loadModel(job.modelId);
  if (job.pooling === "cls_token" && !model.hasClsToken) {
    throw new Error(
      `model '${model.id}' exposes no classification token; use mean_pool`,
    );
  }
  if (job.maxLength < 1) throw new Error("max length must be >= 1");
  if (job.batchSize < 1) throw new Error("batch size must be >= 1");

  const rows = parseTsv(job.inputPath);
  const labeling = rows.some((row) => row.label.includes(","));
  const pooled: Float32Array[] = [];
  const sequences: Float32Array[][] = [];
  const labels: string[] = [];
  let truncatedTexts = 0;

  for (let start = 0; start < rows.length; start += job.batchSize) {
    for (const row of rows.slice(start, start + job.batchSize)) {
      const encoded = model.encode(row.text, job.maxLength);
      if (encoded.tokens.length === 0) {
        throw new Error(`${job.inputPath}:${row.line}: no tokens survive tokenization`);
      }
      if (encoded.truncated > 0) truncatedTexts++;
      let label = row.label;
      if (labeling) {
        const pieces = row.label.split(",");
        if (pieces.length < encoded.tokens.length) {
          throw new Error(
            `${job.inputPath}:${row.line}: ${encoded.tokens.length} tokens ` +
              `but ${pieces.length} labels`,
          );
        }
        label = pieces.slice(0, encoded.tokens.length).join(",");
      }
      pooled.push(
        job.pooling === "cls_token" ? encoded.cls : meanPool(encoded.tokens, model.dim),
      );
      sequences.push(encoded.tokens);
      labels.push(label);
    }
  }
  if (truncatedTexts > 0) {
    console.error(`truncated ${truncatedTexts} over-length texts to ${job.maxLength} tokens`);
  }

  ensureDir(job.outDir);
  const embPath = path.join(job.outDir, "train.aemb");
  const labelsPath = path.join(job.outDir, "train.labels.tsv");
  writeEmbeddings(embPath, pooled);
  writeLabels(labelsPath, labels);
  let tokenFile: string | undefined;
  if (job.writeTokens) {
    tokenFile = path.join(job.outDir, "train.atok");
    writeTokenEmbeddings(tokenFile, sequences);
  }

  // the manifest is only written once the binary headers agree with it
  const header = readEmbeddings(embPath);
  if (header.count !== rows.length || header.dim !== model.dim) {
    throw new Error(
      `embedding header (${header.count}, ${header.dim}) disagrees with ` +
        `export (${rows.length}, ${model.dim})`,
    );
  }
  if (tokenFile) {
    const tok = readTokenEmbeddings(tokenFile);
    if (tok.count !== rows.length || tok.dim !== model.dim) {
      throw new Error("token header disagrees with export");
    }
  }

  const task = labeling ? "labeling" : "classification";
  const manifestPath = path.join(job.outDir, "manifest.json");
  writeManifest(manifestPath, {
    name: job.name ?? path.basename(job.inputPath, ".tsv"),
    task,
    num_classes: checkClasses(labels, job.inputPath),
    embeddings: "train.aemb",
    labels: "train.labels.tsv",
    dim: model.dim,
    count: rows.length,
    ...(tokenFile ? { token_embeddings: "train.atok" } : {}),
    model: model.id,
    pooling: job.pooling,
  });

  if (job.spotCheck > 0) {
    const spots = pooled.slice(0, job.spotCheck).map((vec, id) => ({
      id,
      vector: Array.from(vec),
    }));
    fs.writeFileSync(
      path.join(job.outDir, "spot_check.json"),
      JSON.stringify(spots) + "\n",
    );
  }

  return {
    manifestPath,
    count: rows.length,
    dim: model.dim,
    task,
    truncatedTexts,
  };
}
