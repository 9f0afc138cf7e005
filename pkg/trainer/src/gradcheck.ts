/** Central finite-difference verification of the analytic gradients. */

import { TaskBatch } from "./data.js";
import {
  DecisionIds,
  Model,
  taskLoss,
  taskLossAndGrad,
  trainableParams,
  zeroGrads,
} from "./model.js";

export interface GradCheckReport {
  maxRelError: number;
  worstParam: string;
  worstIndex: number;
  checked: number;
}

export function relError(analytic: number, numeric: number): number {
  const diff = Math.abs(analytic - numeric);
  // Coordinates with a truly zero gradient (the critique loss ignores every
  // logit except the two decision tokens) leave only quadrature noise in the
  // central difference, around 1e-11 at eps=1e-5. Below this floor the two
  // values agree; dividing noise by the 1e-8 denominator floor would not.
  if (diff < 1e-8) return 0;
  return diff / Math.max(1e-8, Math.abs(analytic) + Math.abs(numeric));
}

/** Sweeps every trainable coordinate; use only on tiny models. */
export function gradCheck(
  model: Model,
  items: TaskBatch[],
  decision: DecisionIds,
  eps = 1e-5,
): GradCheckReport {
  const grads = zeroGrads(model.config);
  taskLossAndGrad(model, items, decision, grads, 1);

  let maxRelError = 0;
  let worstParam = "";
  let worstIndex = -1;
  let checked = 0;
  for (const name of trainableParams(model.config)) {
    const theta = model.params.get(name)!;
    const g = grads.get(name)!;
    for (let i = 0; i < theta.length; i++) {
      const saved = theta[i]!;
      theta[i] = saved + eps;
      const plus = taskLoss(model, items, decision);
      theta[i] = saved - eps;
      const minus = taskLoss(model, items, decision);
      theta[i] = saved;
      const numeric = (plus - minus) / (2 * eps);
      const err = relError(g[i]!, numeric);
      checked++;
      if (err > maxRelError) {
        maxRelError = err;
        worstParam = name;
        worstIndex = i;
      }
    }
  }
  return { maxRelError, worstParam, worstIndex, checked };
}
