import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { runExport, ExportJob } from "../src/exporter.js";
import { readEmbeddings, readTokenEmbeddings } from "../src/format.js";
import { loadModel } from "../src/hashModel.js";

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "exp-"));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

function writeInput(name: string, lines: string[]): string {
  const file = path.join(dir, name);
  fs.writeFileSync(file, lines.join("\n") + "\n");
  return file;
}

function job(overrides: Partial<ExportJob>): ExportJob {
  return {
    inputPath: "",
    modelId: "hash-16",
    pooling: "mean_pool",
    outDir: path.join(dir, "out"),
    writeTokens: false,
    batchSize: 4,
    maxLength: 128,
    spotCheck: 0,
    ...overrides,
  };
}

describe("classification export", () => {
  it("writes headers that match the corpus", () => {
    const input = writeInput("c.tsv", ["0\tfirst text\t1", "1\tsecond text\t0", "2\tthird one\t1"]);
    const summary = runExport(job({ inputPath: input }));
    expect(summary.count).toBe(3);
    expect(summary.dim).toBe(16);
    expect(summary.task).toBe("classification");
    const emb = readEmbeddings(path.join(dir, "out", "train.aemb"));
    expect(emb.count).toBe(3);
    expect(emb.dim).toBe(16);
    const manifest = JSON.parse(
      fs.readFileSync(path.join(dir, "out", "manifest.json"), "utf-8"),
    );
    expect(manifest.count).toBe(3);
    expect(manifest.dim).toBe(16);
    expect(manifest.num_classes).toBe(2);
    expect(manifest.model).toBe("hash-16");
  });

  it("is byte-identical across runs", () => {
    const input = writeInput("c.tsv", ["0\tsame text\t1", "1\tmore text\t0"]);
    runExport(job({ inputPath: input, outDir: path.join(dir, "a") }));
    runExport(job({ inputPath: input, outDir: path.join(dir, "b") }));
    for (const name of ["train.aemb", "train.labels.tsv", "manifest.json"]) {
      expect(fs.readFileSync(path.join(dir, "a", name))).toEqual(
        fs.readFileSync(path.join(dir, "b", name)),
      );
    }
  });

  it("mean-pool of a single-token text equals that token vector", () => {
    const input = writeInput("c.tsv", ["0\thello\t0", "1\tmore words here\t1"]);
    runExport(job({ inputPath: input }));
    const emb = readEmbeddings(path.join(dir, "out", "train.aemb"));
    const model = loadModel("hash-16");
    const expected = model.encode("hello", 128).tokens[0];
    expect(Array.from(emb.vectors[0])).toEqual(Array.from(expected));
  });

  it("cls pooling differs from mean pooling", () => {
    const input = writeInput("c.tsv", ["0\ttwo words\t0", "1\tother text\t1"]);
    runExport(job({ inputPath: input, outDir: path.join(dir, "mean") }));
    runExport(job({ inputPath: input, pooling: "cls_token", outDir: path.join(dir, "cls") }));
    const a = readEmbeddings(path.join(dir, "mean", "train.aemb"));
    const b = readEmbeddings(path.join(dir, "cls", "train.aemb"));
    expect(Array.from(a.vectors[0])).not.toEqual(Array.from(b.vectors[0]));
  });

  it("joins sentence pairs into one vector", () => {
    const pair = writeInput("p.tsv", ["0\tfirst half\tsecond half\t1"]);
    const joined = writeInput("j.tsv", ["0\tfirst half second half\t1"]);
    runExport(job({ inputPath: pair, outDir: path.join(dir, "pair") }));
    runExport(job({ inputPath: joined, outDir: path.join(dir, "joined") }));
    const a = readEmbeddings(path.join(dir, "pair", "train.aemb"));
    const b = readEmbeddings(path.join(dir, "joined", "train.aemb"));
    expect(Array.from(a.vectors[0])).toEqual(Array.from(b.vectors[0]));
  });

  it("writes the spot-check file", () => {
    const input = writeInput("c.tsv", ["0\talpha beta\t0", "1\tgamma delta\t1"]);
    runExport(job({ inputPath: input, spotCheck: 2 }));
    const spots = JSON.parse(
      fs.readFileSync(path.join(dir, "out", "spot_check.json"), "utf-8"),
    );
    const emb = readEmbeddings(path.join(dir, "out", "train.aemb"));
    expect(spots).toHaveLength(2);
    spots.forEach((entry: { id: number; vector: number[] }) => {
      expect(entry.vector).toEqual(Array.from(emb.vectors[entry.id]));
    });
  });
});

describe("labeling export", () => {
  it("writes aligned token vectors and labels", () => {
    const input = writeInput("l.tsv", [
      "0\tparis is lovely\t2,0,0",
      "1\tvisit tokyo\t0,1",
    ]);
    const summary = runExport(job({ inputPath: input, writeTokens: true }));
    expect(summary.task).toBe("labeling");
    const tok = readTokenEmbeddings(path.join(dir, "out", "train.atok"));
    expect(tok.offsets).toEqual([0, 3, 5]);
    const labels = fs.readFileSync(path.join(dir, "out", "train.labels.tsv"), "utf-8");
    expect(labels).toBe("0\t2,0,0\n1\t0,1\n");
  });

  it("truncates labels with the text", () => {
    const input = writeInput("l.tsv", ["0\ta b c d\t1,2,3,0"]);
    runExport(job({ inputPath: input, writeTokens: true, maxLength: 2 }));
    const labels = fs.readFileSync(path.join(dir, "out", "train.labels.tsv"), "utf-8");
    expect(labels).toBe("0\t1,2\n");
  });

  it("rejects label/token misalignment", () => {
    const input = writeInput("l.tsv", ["0\tthree word text\t1,0"]);
    expect(() => runExport(job({ inputPath: input, writeTokens: true }))).toThrow(/3 tokens/);
  });
});

describe("input validation", () => {
  it("rejects empty text with its line number", () => {
    const input = writeInput("bad.tsv", ["0\tfine text\t1", "1\t\t0"]);
    expect(() => runExport(job({ inputPath: input }))).toThrow(/bad.tsv:2: empty text/);
  });

  it("rejects duplicate ids", () => {
    const input = writeInput("bad.tsv", ["7\ttext a\t1", "7\ttext b\t0"]);
    expect(() => runExport(job({ inputPath: input }))).toThrow(/duplicate id/);
  });

  it("rejects malformed rows", () => {
    const input = writeInput("bad.tsv", ["just-one-field"]);
    expect(() => runExport(job({ inputPath: input }))).toThrow(/expected 3 or 4/);
  });

  it("rejects non-integer labels", () => {
    const input = writeInput("bad.tsv", ["0\ttext\tpositive"]);
    expect(() => runExport(job({ inputPath: input }))).toThrow(/non-negative integer/);
  });

  it("counts truncated texts", () => {
    const long = Array.from({ length: 40 }, (_, i) => `w${i}`).join(" ");
    const input = writeInput("c.tsv", [`0\t${long}\t1`, "1\tshort\t0"]);
    const summary = runExport(job({ inputPath: input, maxLength: 10 }));
    expect(summary.truncatedTexts).toBe(1);
  });
});
