/** Whitespace tokenizer and vocabulary.
 *
 * Token counting matches the engine side: split on whitespace, nothing else.
 * The two decision tokens are resolved by lookup at startup; if a decision
 * word ever rendered to several tokens, the first one would stand in for it.
 */

export const BOS = "<bos>";
export const UNK = "<unk>";

export interface Vocab {
  tokens: string[];
  index: Map<string, number>;
  bos: number;
  unk: number;
  trueId: number;
  falseId: number;
}

export function tokenize(text: string): string[] {
  return text.split(/\s+/).filter((t) => t.length > 0);
}

export function buildVocab(texts: Iterable<string>): Vocab {
  const tokens = [BOS, UNK, "True", "False"];
  const index = new Map<string, number>(tokens.map((t, i) => [t, i]));
  for (const text of texts) {
    for (const token of tokenize(text)) {
      if (!index.has(token)) {
        index.set(token, tokens.length);
        tokens.push(token);
      }
    }
  }
  return {
    tokens,
    index,
    bos: 0,
    unk: 1,
    trueId: decisionTokenId(index, "True"),
    falseId: decisionTokenId(index, "False"),
  };
}

function decisionTokenId(index: Map<string, number>, word: string): number {
  const first = tokenize(word)[0]!;
  const id = index.get(first);
  if (id === undefined) throw new Error(`decision token ${word} missing from vocabulary`);
  return id;
}

export function encode(vocab: Vocab, text: string): number[] {
  return tokenize(text).map((t) => vocab.index.get(t) ?? vocab.unk);
}

export function vocabFromTokens(tokens: string[]): Vocab {
  const index = new Map<string, number>(tokens.map((t, i) => [t, i]));
  return {
    tokens,
    index,
    bos: index.get(BOS) ?? 0,
    unk: index.get(UNK) ?? 1,
    trueId: decisionTokenId(index, "True"),
    falseId: decisionTokenId(index, "False"),
  };
}
