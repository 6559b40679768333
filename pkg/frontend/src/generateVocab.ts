/**
 * Attribute-vocabulary generation: K independent completions per class,
 * parsed and validated into the vocabulary JSON schema the training engine
 * loads (`{dataset, generator, num_words, num_sets, classes}`).
 */

import { ChatClient, TransportError } from "./chatClient.js";
import { renderInstruction } from "./templates.js";

export interface GenerationRequest {
  dataset: string;
  classNames: string[];
  numWords: number;
  numSets: number;
  endpoint: string;
  model: string;
  retryLimit?: number;
  withImages?: boolean;
  concurrency?: number;
  shape?: "openai-chat" | "raw";
  fetchImpl?: typeof fetch;
}

export interface VocabDocument {
  dataset: string;
  generator: string;
  num_words: number;
  num_sets: number;
  classes: Record<string, string[][]>;
}

export interface GenerationResult {
  document: VocabDocument;
  failures: { className: string; setIndex: number; reason: string }[];
}

/** Leading list markers the model may emit despite the format instruction. */
const LIST_MARKER = /^\s*(?:\d+[.)]|[-*•])\s*/;

export function parseWordResponse(text: string): string[] {
  const words: string[] = [];
  for (const line of text.split("\n")) {
    const cleaned = line.replace(LIST_MARKER, "").trim();
    if (!cleaned) {
      continue;
    }
    // multi-word lines are split and counted individually
    for (const piece of cleaned.split(/\s+/)) {
      const word = piece.replace(/^[,;:.!?'"()]+|[,;:.!?'"()]+$/g, "");
      if (word) {
        words.push(word);
      }
    }
  }
  return words;
}

async function generateSet(
  client: ChatClient,
  request: GenerationRequest,
  className: string,
  retryLimit: number,
): Promise<string[]> {
  const instruction = renderInstruction(
    request.dataset,
    className,
    request.numWords,
    request.withImages ?? false,
  );
  let lastReason = "no attempts made";
  for (let attempt = 0; attempt <= retryLimit; attempt++) {
    let text: string;
    try {
      text = await client.complete(instruction);
    } catch (err) {
      if (err instanceof TransportError) {
        throw new TransportError(`class ${className}: ${err.message}`);
      }
      throw err;
    }
    const words = parseWordResponse(text);
    if (words.length === request.numWords) {
      return words;
    }
    lastReason = `expected ${request.numWords} words, parsed ${words.length}`;
  }
  throw new MalformedResponseError(lastReason);
}

class MalformedResponseError extends Error {}

async function mapWithLimit<T, R>(
  items: T[],
  limit: number,
  fn: (item: T) => Promise<R>,
): Promise<R[]> {
  const results: R[] = new Array(items.length);
  let next = 0;
  const workers = Array.from({ length: Math.max(1, Math.min(limit, items.length)) }, async () => {
    while (next < items.length) {
      const index = next++;
      results[index] = await fn(items[index]);
    }
  });
  await Promise.all(workers);
  return results;
}

export async function generateVocab(request: GenerationRequest): Promise<GenerationResult> {
  if (request.numWords < 1 || request.numSets < 1) {
    throw new Error("numWords and numSets must be >= 1");
  }
  if (request.classNames.length === 0) {
    throw new Error("at least one class name is required");
  }
  const client = new ChatClient({
    endpoint: request.endpoint,
    model: request.model,
    shape: request.shape,
    fetchImpl: request.fetchImpl,
  });
  const retryLimit = request.retryLimit ?? 2;
  const failures: GenerationResult["failures"] = [];

  const perClass = await mapWithLimit(
    request.classNames,
    request.concurrency ?? 4,
    async (className) => {
      const sets: string[][] = [];
      // sets are sequential per class: each is an independent fresh sample
      for (let setIndex = 0; setIndex < request.numSets; setIndex++) {
        try {
          sets.push(await generateSet(client, request, className, retryLimit));
        } catch (err) {
          if (err instanceof MalformedResponseError) {
            failures.push({ className, setIndex, reason: err.message });
          } else {
            throw err;
          }
        }
      }
      return { className, sets };
    },
  );

  const classes: Record<string, string[][]> = {};
  for (const { className, sets } of perClass) {
    if (sets.length === request.numSets) {
      classes[className] = sets;
    }
  }
  return {
    document: {
      dataset: request.dataset,
      generator: request.model,
      num_words: request.numWords,
      num_sets: request.numSets,
      classes,
    },
    failures,
  };
}
