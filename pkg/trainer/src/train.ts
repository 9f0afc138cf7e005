/** Training loop: weighted multi-task objective, Adam updates, loss log,
 * and an atomically written model artifact.
 */

import { mkdirSync, renameSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { BatchSets, TaskBatch, Task } from "./data.js";
import { LossBreakdown, LossWeights, combine } from "./losses.js";
import {
  DecisionIds,
  Model,
  paramShape,
  taskLoss,
  taskLossAndGrad,
  trainableParams,
  zeroGrads,
} from "./model.js";
import { makeRng, shuffle } from "./rng.js";
import { Vocab } from "./tokenizer.js";

export class TrainError extends Error {}

export interface TrainOptions {
  weights: LossWeights;
  lr: number;
  batchSize: number;
  /** Update count; defaults to one pass over every minibatch. */
  steps?: number;
  seed?: number;
  outDir: string;
  log?: (message: string) => void;
}

export interface TrainResult {
  steps: number;
  final: LossBreakdown;
  artifactPath: string;
  lossLogPath: string;
}

export interface ScheduleEntry {
  task: Task;
  items: TaskBatch[];
}

/** Chunk each task into minibatches and pool them shuffled, so tasks are
 * interleaved in proportion to how much data they have.
 */
export function buildSchedule(
  batches: BatchSets,
  batchSize: number,
  rng: () => number,
): ScheduleEntry[] {
  const pool: ScheduleEntry[] = [];
  for (const task of ["d", "r", "c"] as const) {
    const items = [...batches[task]];
    if (items.length === 0) continue;
    shuffle(items, rng);
    for (let i = 0; i < items.length; i += batchSize) {
      pool.push({ task, items: items.slice(i, i + batchSize) });
    }
  }
  shuffle(pool, rng);
  return pool;
}

function atomicWrite(path: string, content: string): void {
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, content);
  renameSync(tmp, path);
}

interface AdamState {
  m: Map<string, Float64Array>;
  v: Map<string, Float64Array>;
  t: number;
}

function adamStep(
  model: Model,
  grads: Map<string, Float64Array>,
  state: AdamState,
  lr: number,
): void {
  state.t += 1;
  const beta1 = 0.9;
  const beta2 = 0.999;
  const correction1 = 1 - Math.pow(beta1, state.t);
  const correction2 = 1 - Math.pow(beta2, state.t);
  for (const name of trainableParams(model.config)) {
    const theta = model.params.get(name)!;
    const g = grads.get(name)!;
    const m = state.m.get(name)!;
    const v = state.v.get(name)!;
    for (let i = 0; i < theta.length; i++) {
      m[i] = beta1 * m[i]! + (1 - beta1) * g[i]!;
      v[i] = beta2 * v[i]! + (1 - beta2) * g[i]! * g[i]!;
      const mhat = m[i]! / correction1;
      const vhat = v[i]! / correction2;
      theta[i]! -= (lr * mhat) / (Math.sqrt(vhat) + 1e-8);
    }
  }
}

const TASK_WEIGHT: Record<Task, keyof LossWeights> = {
  d: "alpha",
  r: "beta",
  c: "gamma",
};

export function train(
  model: Model,
  vocab: Vocab,
  batches: BatchSets,
  options: TrainOptions,
): TrainResult {
  const log = options.log ?? (() => undefined);
  const total = batches.d.length + batches.r.length + batches.c.length;
  if (total === 0) throw new TrainError("all three datasets produced zero batches");

  mkdirSync(options.outDir, { recursive: true });
  const lossLogPath = join(options.outDir, "loss_log.jsonl");
  const artifactPath = join(options.outDir, "model.json");

  const decision: DecisionIds = { trueId: vocab.trueId, falseId: vocab.falseId };
  const rng = makeRng(options.seed ?? 0);
  let schedule = buildSchedule(batches, options.batchSize, rng);
  const steps = options.steps ?? schedule.length;

  // carried per-task values; a task with no data stays at zero throughout
  const current: Record<Task, number> = { d: 0, r: 0, c: 0 };
  for (const task of ["d", "r", "c"] as const) {
    if (batches[task].length > 0) {
      const first = schedule.find((entry) => entry.task === task)!;
      current[task] = taskLoss(model, first.items, decision);
    }
  }

  const rows: string[] = [];
  let breakdown = combine(options.weights, current.d, current.r, current.c);
  const record = (step: number): void => {
    breakdown = combine(options.weights, current.d, current.r, current.c);
    rows.push(
      JSON.stringify({
        step,
        l_d: breakdown.l_d,
        l_r: breakdown.l_r,
        l_c: breakdown.l_c,
        combined: breakdown.combined,
      }),
    );
  };
  record(0);

  const adam: AdamState = { m: new Map(), v: new Map(), t: 0 };
  for (const name of trainableParams(model.config)) {
    const [rows_, cols] = paramShape(model.config, name);
    adam.m.set(name, new Float64Array(rows_ * cols));
    adam.v.set(name, new Float64Array(rows_ * cols));
  }

  let cursor = 0;
  for (let step = 1; step <= steps; step++) {
    if (cursor >= schedule.length) {
      schedule = buildSchedule(batches, options.batchSize, rng);
      cursor = 0;
    }
    const entry = schedule[cursor++]!;
    const weight = options.weights[TASK_WEIGHT[entry.task]];
    const grads = zeroGrads(model.config);
    const loss = taskLossAndGrad(model, entry.items, decision, grads, weight);
    current[entry.task] = loss;
    record(step);
    if (!Number.isFinite(loss) || !Number.isFinite(breakdown.combined)) {
      atomicWrite(lossLogPath, rows.join("\n") + "\n");
      const message = `non-finite loss at step ${step} on task ${entry.task}: ${loss}`;
      log(message);
      throw new TrainError(message);
    }
    adamStep(model, grads, adam, options.lr);
  }

  atomicWrite(lossLogPath, rows.join("\n") + "\n");
  const artifact = {
    config: model.config,
    tokens: vocab.tokens,
    params: Object.fromEntries(
      [...model.params.entries()].map(([name, tensor]) => [name, Array.from(tensor)]),
    ),
    final: breakdown,
    steps,
  };
  atomicWrite(artifactPath, JSON.stringify(artifact));
  log(`trained ${steps} steps, combined loss ${breakdown.combined.toFixed(6)}`);
  return { steps, final: breakdown, artifactPath, lossLogPath };
}
