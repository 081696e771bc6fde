#!/usr/bin/env node
/**
 * embed-exporter CLI.
 *
 *   embed-exporter export --input corpus.tsv --model hash-64 \
 *       --pooling mean_pool --out data/corpus [--tokens] [--max-length 128]
 */

import { parseArgs } from "node:util";

import { PoolingRule, runExport } from "./exporter.js";

function usage(): never {
  console.error(
    "usage: embed-exporter export --input <tsv> --model <id> " +
      "--pooling <cls_token|mean_pool> --out <dir> [--tokens] " +
      "[--batch-size N] [--max-length N] [--name NAME] [--spot-check N]",
  );
  process.exit(2);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command !== "export") usage();
  const { values } = parseArgs({
    args: rest,
    options: {
      input: { type: "string" },
      model: { type: "string", default: "hash-64" },
      pooling: { type: "string", default: "mean_pool" },
      out: { type: "string" },
      tokens: { type: "boolean", default: false },
      "batch-size": { type: "string", default: "64" },
      "max-length": { type: "string", default: "128" },
      name: { type: "string" },
      "spot-check": { type: "string", default: "0" },
    },
  });
  if (!values.input || !values.out) usage();
  if (values.pooling !== "cls_token" && values.pooling !== "mean_pool") {
    console.error(`unknown pooling rule '${values.pooling}'`);
    return 2;
  }
  const summary = runExport({
    inputPath: values.input,
    modelId: values.model as string,
    pooling: values.pooling as PoolingRule,
    outDir: values.out,
    writeTokens: Boolean(values.tokens),
    batchSize: Number(values["batch-size"]),
    maxLength: Number(values["max-length"]),
    name: values.name,
    spotCheck: Number(values["spot-check"]),
  });
  console.log(
    `${summary.manifestPath} (${summary.task}, count=${summary.count}, dim=${summary.dim})`,
  );
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() as string);
if (invokedDirectly) {
  try {
    process.exit(main(process.argv.slice(2)));
  } catch (error) {
    console.error(error instanceof Error ? error.message : String(error));
    process.exit(1);
  }
}
