import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import {
  readEmbeddings,
  readTokenEmbeddings,
  writeEmbeddings,
  writeLabels,
  writeTokenEmbeddings,
} from "../src/format.js";

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "fmt-"));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

describe("embedding file", () => {
  it("writes the exact header layout", () => {
    const file = path.join(dir, "x.aemb");
    writeEmbeddings(file, [new Float32Array([1, 2]), new Float32Array([3, 4]), new Float32Array([5, 6])]);
    const raw = fs.readFileSync(file);
    expect(raw.subarray(0, 4).toString("ascii")).toBe("AEMB");
    expect(raw.readUInt32LE(4)).toBe(1);
    expect(Number(raw.readBigUInt64LE(8))).toBe(3);
    expect(raw.readUInt32LE(16)).toBe(2);
    expect(raw.length).toBe(20 + 3 * 2 * 4);
    expect(raw.readFloatLE(20)).toBe(1);
    expect(raw.readFloatLE(20 + 5 * 4)).toBe(6);
  });

  it("round-trips vectors", () => {
    const file = path.join(dir, "x.aemb");
    const vectors = [new Float32Array([0.25, -1.5, 3])];
    writeEmbeddings(file, vectors);
    const back = readEmbeddings(file);
    expect(back.count).toBe(1);
    expect(back.dim).toBe(3);
    expect(Array.from(back.vectors[0])).toEqual([0.25, -1.5, 3]);
  });

  it("leaves no temp file behind", () => {
    const file = path.join(dir, "x.aemb");
    writeEmbeddings(file, [new Float32Array([1])]);
    expect(fs.existsSync(file + ".tmp")).toBe(false);
  });

  it("rejects ragged rows", () => {
    expect(() =>
      writeEmbeddings(path.join(dir, "x.aemb"), [
        new Float32Array([1, 2]),
        new Float32Array([1]),
      ]),
    ).toThrow(/dimension/);
  });
});

describe("token file", () => {
  it("writes offsets and totals", () => {
    const file = path.join(dir, "x.atok");
    writeTokenEmbeddings(file, [
      [new Float32Array([1, 0]), new Float32Array([0, 1])],
      [new Float32Array([2, 2])],
    ]);
    const back = readTokenEmbeddings(file);
    expect(back.count).toBe(2);
    expect(back.dim).toBe(2);
    expect(back.totalTokens).toBe(3);
    expect(back.offsets).toEqual([0, 2, 3]);
  });
});

describe("labels file", () => {
  it("writes dense ids with tabs", () => {
    const file = path.join(dir, "labels.tsv");
    writeLabels(file, ["1", "0,2,1"]);
    expect(fs.readFileSync(file, "utf-8")).toBe("0\t1\n1\t0,2,1\n");
  });
});
