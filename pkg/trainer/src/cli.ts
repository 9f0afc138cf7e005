#!/usr/bin/env node
/** Command-line entry point.
 *
 * Usage:
 *   selfhop-train train --dd dd.jsonl --dr dr.jsonl --dc dc.jsonl \
 *     --alpha 1 --beta 1 --gamma 1 --lr 0.05 --batch 64 --cutoff 8192 \
 *     --out outdir [--steps N] [--mode full|lora] [--seed N]
 *
 * The leading "train" word is optional; the flag set is the contract the
 * orchestration engine renders into its trainer command template.
 *
 * --mode lora trains rank-r adapters over a frozen base instead of the full
 * parameter set. It mirrors the shape of low-rank adaptation, nothing more.
 */

import { pathToFileURL } from "node:url";

import { DataError, buildBatches, datasetTexts, loadDatasets } from "./data.js";
import { NumericalGuardError } from "./losses.js";
import { Mode, ModelConfig, initModel } from "./model.js";
import { buildVocab } from "./tokenizer.js";
import { TrainError, train } from "./train.js";

const USAGE =
  "usage: train --dd PATH --dr PATH --dc PATH [--alpha F] [--beta F] [--gamma F] " +
  "[--lr F] [--batch N] [--cutoff N] --out DIR [--steps N] [--mode full|lora] [--seed N]";

interface CliArgs {
  dd: string;
  dr: string;
  dc: string;
  alpha: number;
  beta: number;
  gamma: number;
  lr: number;
  batch: number;
  cutoff: number;
  out: string;
  steps?: number;
  mode: Mode;
  seed: number;
}

class UsageError extends Error {}

function parseArgs(argv: string[]): CliArgs {
  const args = [...argv];
  if (args[0] === "train") args.shift();

  const strings: Record<string, string> = {};
  for (let i = 0; i < args.length; i += 2) {
    const flag = args[i]!;
    if (!flag.startsWith("--")) throw new UsageError(`unexpected argument ${flag}`);
    const value = args[i + 1];
    if (value === undefined) throw new UsageError(`flag ${flag} needs a value`);
    strings[flag.slice(2)] = value;
  }

  const takeString = (name: string): string => {
    const value = strings[name];
    if (value === undefined) throw new UsageError(`missing required flag --${name}`);
    delete strings[name];
    return value;
  };
  const takeNumber = (name: string, fallback: number): number => {
    const raw = strings[name];
    if (raw === undefined) return fallback;
    delete strings[name];
    const value = Number(raw);
    if (!Number.isFinite(value)) throw new UsageError(`flag --${name} expects a number, got ${raw}`);
    return value;
  };

  const parsed: CliArgs = {
    dd: takeString("dd"),
    dr: takeString("dr"),
    dc: takeString("dc"),
    alpha: takeNumber("alpha", 1),
    beta: takeNumber("beta", 1),
    gamma: takeNumber("gamma", 1),
    lr: takeNumber("lr", 1e-4),
    batch: takeNumber("batch", 64),
    cutoff: takeNumber("cutoff", 8192),
    out: takeString("out"),
    mode: "full",
    seed: takeNumber("seed", 0),
  };
  if (strings["steps"] !== undefined) {
    parsed.steps = takeNumber("steps", 0);
  }
  if (strings["mode"] !== undefined) {
    const mode = strings["mode"];
    delete strings["mode"];
    if (mode !== "full" && mode !== "lora") {
      throw new UsageError(`flag --mode expects full or lora, got ${mode}`);
    }
    parsed.mode = mode;
  }
  const leftover = Object.keys(strings);
  if (leftover.length > 0) throw new UsageError(`unknown flag --${leftover[0]}`);
  if (parsed.batch < 1 || !Number.isInteger(parsed.batch)) {
    throw new UsageError("flag --batch expects a positive integer");
  }
  if (parsed.cutoff < 2 || !Number.isInteger(parsed.cutoff)) {
    throw new UsageError("flag --cutoff expects an integer of at least 2");
  }
  return parsed;
}

export function main(argv: string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (error) {
    console.error(`error: ${(error as Error).message}`);
    console.error(USAGE);
    return 2;
  }

  try {
    const data = loadDatasets(args.dd, args.dr, args.dc);
    const vocab = buildVocab(datasetTexts(data));
    const batches = buildBatches(vocab, data, args.cutoff);
    console.log(
      `loaded ${batches.d.length} decomposition, ${batches.r.length} reading, ` +
        `${batches.c.length} critique records; vocabulary ${vocab.tokens.length}`,
    );

    const config: ModelConfig = {
      vocabSize: vocab.tokens.length,
      embedDim: 24,
      hiddenDim: 32,
      window: 16,
      decay: 0.75,
      mode: args.mode,
      loraRank: 4,
    };
    const model = initModel(config, args.seed);
    const result = train(model, vocab, batches, {
      weights: { alpha: args.alpha, beta: args.beta, gamma: args.gamma },
      lr: args.lr,
      batchSize: args.batch,
      steps: args.steps,
      seed: args.seed,
      outDir: args.out,
      log: (message) => console.log(message),
    });
    console.log(
      `wrote ${result.artifactPath} after ${result.steps} steps ` +
        `(combined loss ${result.final.combined.toFixed(6)})`,
    );
    return 0;
  } catch (error) {
    if (
      error instanceof DataError ||
      error instanceof TrainError ||
      error instanceof NumericalGuardError ||
      (error as NodeJS.ErrnoException).code === "ENOENT"
    ) {
      console.error(`error: ${(error as Error).message}`);
      return 1;
    }
    throw error;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
