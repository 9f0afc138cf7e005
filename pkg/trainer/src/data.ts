/** Dataset loading and batch construction.
 *
 * The three input files use the engine's export schemas:
 *   dd: {q0, history: [{subq, suba}], target}
 *   dr: {subq, references: [string], target_suba}
 *   dc: {q0, history, subq, suba, label}
 *
 * Prompts here are compact reconstructions from the same wire-format
 * directives the engine trains toward ("Follow up:", "Intermediate answer:",
 * "So the final answer is:", numbered references, the flag line). When a
 * record exceeds the token cutoff, the history (or reference) block is
 * truncated from the left; the head, tail, and target are never touched.
 */

import { readFileSync } from "node:fs";

import { Vocab, encode } from "./tokenizer.js";

export type Task = "d" | "r" | "c";

export class DataError extends Error {}

export interface HistoryPair {
  subq: string;
  suba: string;
}

export interface TaskBatch {
  task: Task;
  /** <bos> + context tokens, then target tokens for tasks d and r. */
  tokens: number[];
  /** Index of the first scored position; tokens.length for task c. */
  targetStart: number;
  /** Critique label, task c only. */
  label?: 0 | 1;
  origin: string; // "file:line", for error messages
}

// ---------------------------------------------------------------------------
// prompt rendering
// ---------------------------------------------------------------------------

function historyLines(history: HistoryPair[]): string[] {
  const lines: string[] = [];
  for (const pair of history) {
    lines.push(`Follow up: ${pair.subq}`);
    lines.push(`Intermediate answer: ${pair.suba}`);
  }
  return lines;
}

/** Context split into head / truncatable middle / tail. */
export interface Segmented {
  head: string;
  middle: string[];
  tail: string;
}

export function decompContext(q0: string, history: HistoryPair[]): Segmented {
  return {
    head: `Question: ${q0}`,
    middle: historyLines(history),
    tail: history.length
      ? "Are follow up questions needed here: Yes."
      : "Are follow up questions needed here:",
  };
}

export function readContext(subq: string, references: string[]): Segmented {
  const middle = references.length
    ? references.map((r, i) => `Reference [${i + 1}]: ${r}`)
    : ["Null"];
  return { head: "", middle, tail: `Question: ${subq}` };
}

export function critiqueContext(
  q0: string,
  history: HistoryPair[],
  subq: string,
  suba: string,
): Segmented {
  const middle = history.length ? historyLines(history) : ["Null"];
  return {
    head: `Question: ${q0}\nPreviously generated subquestions and answers:`,
    middle,
    tail: `Follow up: ${subq}\nIntermediate answer: ${suba}\nFinal Judgment: flag =`,
  };
}

// ---------------------------------------------------------------------------
// batch assembly with cutoff
// ---------------------------------------------------------------------------

function assemble(
  vocab: Vocab,
  task: Task,
  context: Segmented,
  target: string,
  cutoff: number,
  origin: string,
  label?: 0 | 1,
): TaskBatch {
  const head = context.head ? encode(vocab, context.head) : [];
  const tail = encode(vocab, context.tail);
  const targetTokens = encode(vocab, target);
  if (task !== "c" && targetTokens.length === 0) {
    throw new DataError(`${origin}: empty target`);
  }

  let middle: number[] = [];
  for (const line of context.middle) middle = middle.concat(encode(vocab, line));

  const fixed = 1 + head.length + tail.length + targetTokens.length;
  if (fixed > cutoff) {
    throw new DataError(
      `${origin}: record needs ${fixed} tokens with no history at all, cutoff is ${cutoff}`,
    );
  }
  // drop from the left of the middle block until the record fits
  const over = fixed + middle.length - cutoff;
  if (over > 0) middle = middle.slice(over);

  const tokens = [vocab.bos, ...head, ...middle, ...tail, ...targetTokens];
  return {
    task,
    tokens,
    targetStart: tokens.length - targetTokens.length,
    label,
    origin,
  };
}

// ---------------------------------------------------------------------------
// JSONL parsing
// ---------------------------------------------------------------------------

export interface RawRow {
  row: Record<string, unknown>;
  origin: string;
}

function readRows(path: string): RawRow[] {
  const rows: RawRow[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!.trim();
    if (!line) continue;
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (error) {
      throw new DataError(`${path}:${i + 1}: not valid JSON (${(error as Error).message})`);
    }
    if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
      throw new DataError(`${path}:${i + 1}: expected an object`);
    }
    rows.push({ row: parsed as Record<string, unknown>, origin: `${path}:${i + 1}` });
  }
  return rows;
}

function str(row: Record<string, unknown>, field: string, origin: string): string {
  const value = row[field];
  if (typeof value !== "string") throw new DataError(`${origin}: field ${field} must be a string`);
  return value;
}

function strList(row: Record<string, unknown>, field: string, origin: string): string[] {
  const value = row[field];
  if (!Array.isArray(value) || value.some((v) => typeof v !== "string")) {
    throw new DataError(`${origin}: field ${field} must be a list of strings`);
  }
  return value as string[];
}

function history(row: Record<string, unknown>, origin: string): HistoryPair[] {
  const value = row["history"];
  if (!Array.isArray(value)) throw new DataError(`${origin}: field history must be a list`);
  return value.map((entry, i) => {
    if (typeof entry !== "object" || entry === null) {
      throw new DataError(`${origin}: history[${i}] must be an object`);
    }
    const pair = entry as Record<string, unknown>;
    if (typeof pair["subq"] !== "string" || typeof pair["suba"] !== "string") {
      throw new DataError(`${origin}: history[${i}] needs string subq and suba`);
    }
    return { subq: pair["subq"], suba: pair["suba"] };
  });
}

export interface Datasets {
  dd: RawRow[];
  dr: RawRow[];
  dc: RawRow[];
}

export function loadDatasets(ddPath: string, drPath: string, dcPath: string): Datasets {
  return { dd: readRows(ddPath), dr: readRows(drPath), dc: readRows(dcPath) };
}

/** Every piece of text a dataset can contribute to the vocabulary. */
export function* datasetTexts(data: Datasets): Generator<string> {
  for (const { row, origin } of data.dd) {
    const context = decompContext(str(row, "q0", origin), history(row, origin));
    yield context.head;
    yield* context.middle;
    yield context.tail;
    yield str(row, "target", origin);
  }
  for (const { row, origin } of data.dr) {
    const context = readContext(str(row, "subq", origin), strList(row, "references", origin));
    yield* context.middle;
    yield context.tail;
    yield str(row, "target_suba", origin);
  }
  for (const { row, origin } of data.dc) {
    const context = critiqueContext(
      str(row, "q0", origin),
      history(row, origin),
      str(row, "subq", origin),
      str(row, "suba", origin),
    );
    yield context.head;
    yield* context.middle;
    yield context.tail;
  }
}

export interface BatchSets {
  d: TaskBatch[];
  r: TaskBatch[];
  c: TaskBatch[];
}

export function buildBatches(vocab: Vocab, data: Datasets, cutoff: number): BatchSets {
  const d = data.dd.map(({ row, origin }) =>
    assemble(
      vocab,
      "d",
      decompContext(str(row, "q0", origin), history(row, origin)),
      str(row, "target", origin),
      cutoff,
      origin,
    ),
  );
  const r = data.dr.map(({ row, origin }) =>
    assemble(
      vocab,
      "r",
      readContext(str(row, "subq", origin), strList(row, "references", origin)),
      str(row, "target_suba", origin),
      cutoff,
      origin,
    ),
  );
  const c = data.dc.map(({ row, origin }) => {
    const label = row["label"];
    if (label !== 0 && label !== 1) {
      throw new DataError(`${origin}: field label must be 0 or 1`);
    }
    return assemble(
      vocab,
      "c",
      critiqueContext(
        str(row, "q0", origin),
        history(row, origin),
        str(row, "subq", origin),
        str(row, "suba", origin),
      ),
      "",
      cutoff,
      origin,
      label,
    );
  });
  return { d, r, c };
}
