/** A tiny causal language model with analytic gradients.
 *
 * At every position the context is summarized as a recency-weighted average
 * of the last `window` token embeddings (weight decay^j for the token j steps
 * back), pushed through one tanh layer to a softmax over the vocabulary:
 *
 *   x = sum_j decay^j E[tok_{i-1-j}] / sum_j decay^j
 *   h = tanh(W1 x + b1)
 *   logits = W2 h + b2
 *
 * In "lora" mode the base weights and embeddings are frozen and rank-r
 * adapters are trained instead, applied as W_eff = W + A B.
 *
 * The model is deliberately small. It exists so the training loop, the loss
 * arithmetic, and the gradient flow can be exercised end to end on CPU; it
 * makes no claim of matching any large pretrained network.
 */

import { TaskBatch } from "./data.js";
import { critiqueLossFromProbs } from "./losses.js";
import { makeRng, uniform } from "./rng.js";

export type Mode = "full" | "lora";

export interface ModelConfig {
  vocabSize: number;
  embedDim: number;
  hiddenDim: number;
  window: number;
  decay: number;
  mode: Mode;
  loraRank: number;
}

export interface Model {
  config: ModelConfig;
  /** Named tensors, row-major. */
  params: Map<string, Float64Array>;
}

export function paramShape(config: ModelConfig, name: string): [number, number] {
  const { vocabSize: v, embedDim: de, hiddenDim: dh, loraRank: r } = config;
  switch (name) {
    case "E":
      return [v, de];
    case "W1":
      return [dh, de];
    case "b1":
      return [dh, 1];
    case "W2":
      return [v, dh];
    case "b2":
      return [v, 1];
    case "la1":
      return [dh, r];
    case "lb1":
      return [r, de];
    case "la2":
      return [v, r];
    case "lb2":
      return [r, dh];
    default:
      throw new Error(`unknown parameter ${name}`);
  }
}

const BASE_PARAMS = ["E", "W1", "b1", "W2", "b2"];
const ADAPTER_PARAMS = ["la1", "lb1", "la2", "lb2"];

export function paramNames(config: ModelConfig): string[] {
  return config.mode === "lora" ? [...BASE_PARAMS, ...ADAPTER_PARAMS] : [...BASE_PARAMS];
}

/** Parameters the optimizer is allowed to touch. */
export function trainableParams(config: ModelConfig): string[] {
  return config.mode === "lora" ? [...ADAPTER_PARAMS] : [...BASE_PARAMS];
}

export function initModel(config: ModelConfig, seed: number): Model {
  const rng = makeRng(seed);
  const params = new Map<string, Float64Array>();
  for (const name of paramNames(config)) {
    const [rows, cols] = paramShape(config, name);
    const tensor = new Float64Array(rows * cols);
    const scale = 0.5 / Math.sqrt(cols);
    // biases start at zero; so does la* so that adapters begin as a no-op
    if (!name.startsWith("b") && !name.startsWith("la")) {
      for (let i = 0; i < tensor.length; i++) tensor[i] = uniform(rng, scale);
    }
    params.set(name, tensor);
  }
  return { config, params };
}

export function zeroGrads(config: ModelConfig): Map<string, Float64Array> {
  const grads = new Map<string, Float64Array>();
  for (const name of trainableParams(config)) {
    const [rows, cols] = paramShape(config, name);
    grads.set(name, new Float64Array(rows * cols));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// linear algebra on flat row-major arrays
// ---------------------------------------------------------------------------

function matvec(w: Float64Array, rows: number, cols: number, x: Float64Array, out: Float64Array): void {
  for (let i = 0; i < rows; i++) {
    let acc = 0;
    const base = i * cols;
    for (let j = 0; j < cols; j++) acc += w[base + j]! * x[j]!;
    out[i] = acc;
  }
}

function matTvecAdd(w: Float64Array, rows: number, cols: number, y: Float64Array, out: Float64Array): void {
  for (let i = 0; i < rows; i++) {
    const yi = y[i]!;
    if (yi === 0) continue;
    const base = i * cols;
    for (let j = 0; j < cols; j++) out[j]! += w[base + j]! * yi;
  }
}

function outerAdd(g: Float64Array, rows: number, cols: number, y: Float64Array, x: Float64Array, s: number): void {
  for (let i = 0; i < rows; i++) {
    const yi = y[i]! * s;
    if (yi === 0) continue;
    const base = i * cols;
    for (let j = 0; j < cols; j++) g[base + j]! += yi * x[j]!;
  }
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

interface PositionState {
  windowIds: number[];
  windowWeights: number[]; // already normalized
  x: Float64Array;
  u1: Float64Array | null; // lb1 x, lora only
  h: Float64Array;
  u2: Float64Array | null; // lb2 h, lora only
  p: Float64Array;
}

function forwardPosition(model: Model, tokens: number[], pos: number): PositionState {
  const { config, params } = model;
  const { embedDim: de, hiddenDim: dh, vocabSize: v, loraRank: r } = config;
  const e = params.get("E")!;
  const lora = config.mode === "lora";

  const span = Math.min(config.window, pos);
  const windowIds: number[] = [];
  const raw: number[] = [];
  let total = 0;
  for (let j = 0; j < span; j++) {
    windowIds.push(tokens[pos - 1 - j]!);
    const w = Math.pow(config.decay, j);
    raw.push(w);
    total += w;
  }
  const windowWeights = raw.map((w) => w / total);

  const x = new Float64Array(de);
  for (let j = 0; j < span; j++) {
    const base = windowIds[j]! * de;
    const w = windowWeights[j]!;
    for (let k = 0; k < de; k++) x[k]! += w * e[base + k]!;
  }

  const pre = new Float64Array(dh);
  matvec(params.get("W1")!, dh, de, x, pre);
  let u1: Float64Array | null = null;
  if (lora) {
    u1 = new Float64Array(r);
    matvec(params.get("lb1")!, r, de, x, u1);
    const la1 = params.get("la1")!;
    for (let i = 0; i < dh; i++) {
      let acc = 0;
      for (let k = 0; k < r; k++) acc += la1[i * r + k]! * u1[k]!;
      pre[i]! += acc;
    }
  }
  const b1 = params.get("b1")!;
  const h = new Float64Array(dh);
  for (let i = 0; i < dh; i++) h[i] = Math.tanh(pre[i]! + b1[i]!);

  const logits = new Float64Array(v);
  matvec(params.get("W2")!, v, dh, h, logits);
  let u2: Float64Array | null = null;
  if (lora) {
    u2 = new Float64Array(r);
    matvec(params.get("lb2")!, r, dh, h, u2);
    const la2 = params.get("la2")!;
    for (let i = 0; i < v; i++) {
      let acc = 0;
      for (let k = 0; k < r; k++) acc += la2[i * r + k]! * u2[k]!;
      logits[i]! += acc;
    }
  }
  const b2 = params.get("b2")!;
  let maxLogit = -Infinity;
  for (let i = 0; i < v; i++) {
    logits[i]! += b2[i]!;
    if (logits[i]! > maxLogit) maxLogit = logits[i]!;
  }
  const p = new Float64Array(v);
  let z = 0;
  for (let i = 0; i < v; i++) {
    p[i] = Math.exp(logits[i]! - maxLogit);
    z += p[i]!;
  }
  for (let i = 0; i < v; i++) p[i]! /= z;

  return { windowIds, windowWeights, x, u1, h, u2, p };
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

function backwardPosition(
  model: Model,
  state: PositionState,
  dlogits: Float64Array,
  grads: Map<string, Float64Array>,
): void {
  const { config, params } = model;
  const { embedDim: de, hiddenDim: dh, vocabSize: v, loraRank: r } = config;
  const lora = config.mode === "lora";

  const dh_vec = new Float64Array(dh);
  matTvecAdd(params.get("W2")!, v, dh, dlogits, dh_vec);
  if (lora) {
    const la2 = params.get("la2")!;
    const v2 = new Float64Array(r);
    matTvecAdd(la2, v, r, dlogits, v2);
    outerAdd(grads.get("la2")!, v, r, dlogits, state.u2!, 1);
    outerAdd(grads.get("lb2")!, r, dh, v2, state.h, 1);
    matTvecAdd(params.get("lb2")!, r, dh, v2, dh_vec);
  } else {
    outerAdd(grads.get("W2")!, v, dh, dlogits, state.h, 1);
    const gb2 = grads.get("b2")!;
    for (let i = 0; i < v; i++) gb2[i]! += dlogits[i]!;
  }

  const dpre = new Float64Array(dh);
  for (let i = 0; i < dh; i++) dpre[i] = dh_vec[i]! * (1 - state.h[i]! * state.h[i]!);

  if (lora) {
    const la1 = params.get("la1")!;
    const v1 = new Float64Array(r);
    matTvecAdd(la1, dh, r, dpre, v1);
    outerAdd(grads.get("la1")!, dh, r, dpre, state.u1!, 1);
    outerAdd(grads.get("lb1")!, r, de, v1, state.x, 1);
    return; // embeddings and base weights are frozen
  }

  outerAdd(grads.get("W1")!, dh, de, dpre, state.x, 1);
  const gb1 = grads.get("b1")!;
  for (let i = 0; i < dh; i++) gb1[i]! += dpre[i]!;

  const dx = new Float64Array(de);
  matTvecAdd(params.get("W1")!, dh, de, dpre, dx);
  const gE = grads.get("E")!;
  for (let j = 0; j < state.windowIds.length; j++) {
    const base = state.windowIds[j]! * de;
    const w = state.windowWeights[j]!;
    for (let k = 0; k < de; k++) gE[base + k]! += w * dx[k]!;
  }
}

// ---------------------------------------------------------------------------
// task losses over minibatches
// ---------------------------------------------------------------------------

export interface DecisionIds {
  trueId: number;
  falseId: number;
}

/** Mean NLL of target tokens for d/r items, or mean renormalized BCE for c. */
export function taskLoss(model: Model, items: TaskBatch[], decision: DecisionIds): number {
  return runTask(model, items, decision, null, 0);
}

/** Same as taskLoss but also accumulates `scale` times the gradient. */
export function taskLossAndGrad(
  model: Model,
  items: TaskBatch[],
  decision: DecisionIds,
  grads: Map<string, Float64Array>,
  scale: number,
): number {
  return runTask(model, items, decision, grads, scale);
}

function runTask(
  model: Model,
  items: TaskBatch[],
  decision: DecisionIds,
  grads: Map<string, Float64Array> | null,
  scale: number,
): number {
  if (items.length === 0) throw new Error("cannot take the loss of an empty minibatch");
  const task = items[0]!.task;
  if (items.some((b) => b.task !== task)) throw new Error("mixed tasks in one minibatch");

  if (task === "c") return runCritique(model, items, decision, grads, scale);

  let totalTargets = 0;
  for (const item of items) totalTargets += item.tokens.length - item.targetStart;

  let loss = 0;
  for (const item of items) {
    for (let pos = item.targetStart; pos < item.tokens.length; pos++) {
      const state = forwardPosition(model, item.tokens, pos);
      const target = item.tokens[pos]!;
      loss += -Math.log(state.p[target]!);
      if (grads) {
        const dlogits = new Float64Array(state.p);
        dlogits[target]! -= 1;
        const s = scale / totalTargets;
        for (let i = 0; i < dlogits.length; i++) dlogits[i]! *= s;
        backwardPosition(model, state, dlogits, grads);
      }
    }
  }
  return loss / totalTargets;
}

function runCritique(
  model: Model,
  items: TaskBatch[],
  decision: DecisionIds,
  grads: Map<string, Float64Array> | null,
  scale: number,
): number {
  let loss = 0;
  for (const item of items) {
    const state = forwardPosition(model, item.tokens, item.tokens.length);
    const pT = state.p[decision.trueId]!;
    const pF = state.p[decision.falseId]!;
    const label = item.label!;
    loss += critiqueLossFromProbs(pT, pF, label, item.origin);
    if (grads) {
      const s = pT + pF;
      const q = pT / s;
      // dL/dq for L = -(label ln q + (1-label) ln(1-q))
      const dLdq = label === 1 ? -1 / q : 1 / (1 - q);
      const gT = (dLdq * pF) / (s * s);
      const gF = (-dLdq * pT) / (s * s);
      // pull back through the softmax: dlogit_i = p_i (g_i - sum_j g_j p_j)
      const dot = gT * pT + gF * pF;
      const dlogits = new Float64Array(state.p.length);
      const perItem = scale / items.length;
      for (let i = 0; i < dlogits.length; i++) {
        const gi = i === decision.trueId ? gT : i === decision.falseId ? gF : 0;
        dlogits[i] = state.p[i]! * (gi - dot) * perItem;
      }
      backwardPosition(model, state, dlogits, grads);
    }
  }
  return loss / items.length;
}
