#!/usr/bin/env node
/**
 * Command-line entry point.
 *
 *   embedding-extract extract --images DIR --models mock-16,mock-24 \
 *       --classes classes.txt --template "a photo of a {}" --out DIR
 *
 * Known failures print a single-line JSON object {"error": kind, "message":
 * ...} on stderr and exit with the error's code (2 for input problems);
 * anything unexpected exits 1 as InternalError.  That matches the error
 * contract of the embedding-file consumer, so a wrapper script can handle
 * both tools the same way.
 */

import { parseArgs } from "node:util";

import { ExtractError, UsageError } from "./errors";
import { runExtract } from "./extract";

function usage(): string {
  return [
    "usage: embedding-extract extract --images DIR --models NAME[,NAME...]",
    "           --classes FILE --template TEMPLATE --out DIR",
    "",
    "Embeds every PNG under DIR/<class>/ with each named encoder and writes",
    "an embedding bundle (EMB1/LBL1/HED1 files plus manifest.json) to --out.",
    "Encoders: mock-<dim> (seeded random projection, for format and pipeline",
    "testing).  Real backbone names are recognized but need their weights",
    "installed.",
  ].join("\n");
}

function requireOption(value: string | undefined, name: string): string {
  if (value === undefined || value.length === 0) {
    throw new UsageError(`missing required option --${name}`);
  }
  return value;
}

export function main(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command === undefined || command === "--help" || command === "-h") {
      console.log(usage());
      return command === undefined ? 2 : 0;
    }
    if (command !== "extract") {
      throw new UsageError(`unknown command: ${command} (expected "extract")`);
    }
    const { values } = parseArgs({
      args: rest,
      options: {
        images: { type: "string" },
        models: { type: "string" },
        classes: { type: "string" },
        template: { type: "string" },
        out: { type: "string" },
      },
      allowPositionals: false,
    });
    const result = runExtract({
      imageRoot: requireOption(values.images, "images"),
      models: requireOption(values.models, "models")
        .split(",")
        .map((name) => name.trim())
        .filter((name) => name.length > 0),
      classesFile: requireOption(values.classes, "classes"),
      template: requireOption(values.template, "template"),
      outDir: requireOption(values.out, "out"),
    });
    for (const file of result.written) {
      console.log(`wrote ${file}`);
    }
    const skipNote = result.skipped.length > 0 ? ` (skipped ${result.skipped.length})` : "";
    console.log(
      `extracted ${result.samples} samples over ${result.classes.length} classes` +
        ` with ${result.written.length - 4} models${skipNote}`
    );
    return 0;
  } catch (err) {
    if (err instanceof ExtractError) {
      console.error(JSON.stringify(err.payload()));
      return err.exitCode;
    }
    // parseArgs raises plain TypeError on unknown/malformed options.
    if (err instanceof TypeError) {
      console.error(JSON.stringify({ error: "UsageError", message: err.message }));
      return 2;
    }
    const message = err instanceof Error ? `${err.name}: ${err.message}` : String(err);
    console.error(JSON.stringify({ error: "InternalError", message }));
    return 1;
  }
}

if (require.main === module) {
  process.exitCode = main(process.argv.slice(2));
}
