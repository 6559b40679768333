/**
 * Companion CLI.
 *
 *   coapt-companion render   --dataset ImageNet --class Goldfish --num-words 8 [--with-images]
 *   coapt-companion generate --dataset D --classes a,b --num-words 8 --num-sets 3 \
 *                            --endpoint URL --model TAG --out vocab.json
 *   coapt-companion export   --kind token --checkpoint ckpt.json --words w1,w2 --out emb.bin
 *   coapt-companion export   --kind image --features feats.json --out emb.bin
 */

import { parseArgs } from "node:util";
import { readFileSync, writeFileSync } from "node:fs";

import { renderInstruction } from "./templates.js";
import { generateVocab } from "./generateVocab.js";
import { exportImageFeatures, exportTokenEmbeddings } from "./exportEmbeddings.js";

function fail(message: string): never {
  console.error(`error: ${message}`);
  process.exit(2);
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  if (!command) {
    fail("usage: coapt-companion <render|generate|export> [flags]");
  }

  if (command === "render") {
    const { values } = parseArgs({
      args: rest,
      options: {
        dataset: { type: "string" },
        class: { type: "string" },
        "num-words": { type: "string" },
        "with-images": { type: "boolean", default: false },
      },
    });
    if (!values.dataset || !values.class || !values["num-words"]) {
      fail("render needs --dataset, --class, --num-words");
    }
    process.stdout.write(
      renderInstruction(
        values.dataset,
        values.class,
        Number(values["num-words"]),
        values["with-images"] ?? false,
      ) + "\n",
    );
    return 0;
  }

  if (command === "generate") {
    const { values } = parseArgs({
      args: rest,
      options: {
        dataset: { type: "string" },
        classes: { type: "string" },
        "classes-file": { type: "string" },
        "num-words": { type: "string", default: "8" },
        "num-sets": { type: "string", default: "3" },
        endpoint: { type: "string" },
        model: { type: "string", default: "gpt-4" },
        shape: { type: "string", default: "openai-chat" },
        retries: { type: "string", default: "2" },
        concurrency: { type: "string", default: "4" },
        "with-images": { type: "boolean", default: false },
        out: { type: "string" },
      },
    });
    if (!values.dataset || !values.endpoint || !values.out) {
      fail("generate needs --dataset, --endpoint, --out");
    }
    let classNames: string[] = [];
    if (values.classes) {
      classNames = values.classes.split(",").map((c) => c.trim()).filter(Boolean);
    } else if (values["classes-file"]) {
      classNames = readFileSync(values["classes-file"], "utf-8")
        .split("\n")
        .map((c) => c.trim())
        .filter(Boolean);
    }
    if (classNames.length === 0) {
      fail("generate needs --classes or --classes-file");
    }
    const result = await generateVocab({
      dataset: values.dataset,
      classNames,
      numWords: Number(values["num-words"]),
      numSets: Number(values["num-sets"]),
      endpoint: values.endpoint,
      model: values.model!,
      shape: values.shape as "openai-chat" | "raw",
      retryLimit: Number(values.retries),
      concurrency: Number(values.concurrency),
      withImages: values["with-images"] ?? false,
    });
    writeFileSync(values.out, JSON.stringify(result.document, null, 2) + "\n");
    console.error(
      `wrote ${values.out}: ${Object.keys(result.document.classes).length}/${classNames.length} classes`,
    );
    if (result.failures.length > 0) {
      for (const failure of result.failures) {
        console.error(
          `failed: class ${failure.className} set ${failure.setIndex}: ${failure.reason}`,
        );
      }
      return 1;
    }
    return 0;
  }

  if (command === "export") {
    const { values } = parseArgs({
      args: rest,
      options: {
        kind: { type: "string" },
        checkpoint: { type: "string" },
        words: { type: "string" },
        "words-file": { type: "string" },
        features: { type: "string" },
        out: { type: "string" },
      },
    });
    if (!values.out) {
      fail("export needs --out");
    }
    if (values.kind === "token") {
      if (!values.checkpoint) {
        fail("token export needs --checkpoint");
      }
      let words: string[] = [];
      if (values.words) {
        words = values.words.split(",").map((w) => w.trim()).filter(Boolean);
      } else if (values["words-file"]) {
        words = readFileSync(values["words-file"], "utf-8")
          .split("\n")
          .map((w) => w.trim())
          .filter(Boolean);
      }
      if (words.length === 0) {
        fail("token export needs --words or --words-file");
      }
      const outcome = exportTokenEmbeddings(values.checkpoint, words, values.out);
      console.error(`wrote ${values.out}: ${outcome.written.length} records, ${outcome.skipped.length} skipped`);
      return 0;
    }
    if (values.kind === "image") {
      if (!values.features) {
        fail("image export needs --features");
      }
      const outcome = exportImageFeatures(values.features, values.out);
      console.error(`wrote ${values.out}: ${outcome.written.length} records`);
      return 0;
    }
    fail("export needs --kind token|image");
  }

  fail(`unknown command ${JSON.stringify(command)}`);
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
    process.exit(1);
  },
);
