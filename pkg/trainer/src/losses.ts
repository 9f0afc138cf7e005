/** Loss arithmetic shared by the model and the training loop. */

export class NumericalGuardError extends Error {}

/** BCE on the renormalized decision probability q = pTrue/(pTrue+pFalse).
 *
 * Both probabilities zero means the model has pushed the entire mass off the
 * True/False pair and the ratio is undefined; that is reported rather than
 * silently producing NaN.
 */
export function critiqueLossFromProbs(
  pTrue: number,
  pFalse: number,
  label: 0 | 1,
  origin = "<batch>",
): number {
  const s = pTrue + pFalse;
  if (!(s > 0)) {
    throw new NumericalGuardError(
      `${origin}: P(True) + P(False) is ${s}; the renormalized decision probability is undefined`,
    );
  }
  const q = pTrue / s;
  return label === 1 ? -Math.log(q) : -Math.log(1 - q);
}

export interface LossBreakdown {
  l_d: number;
  l_r: number;
  l_c: number;
  combined: number;
}

export interface LossWeights {
  alpha: number;
  beta: number;
  gamma: number;
}

export function combine(weights: LossWeights, l_d: number, l_r: number, l_c: number): LossBreakdown {
  return {
    l_d,
    l_r,
    l_c,
    combined: weights.alpha * l_d + weights.beta * l_r + weights.gamma * l_c,
  };
}
