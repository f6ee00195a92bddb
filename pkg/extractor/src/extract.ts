/**
 * The extraction job: walk a per-class image folder, embed every decodable
 * image with every requested encoder, build the zero-shot text head, and
 * write EMB1/LBL1/HED1/id files plus the manifest that ties them together.
 *
 * Invariants kept here:
 *   - class order in the manifest equals line order in the classes file,
 *     and LBL1 indices refer to that order;
 *   - sample order is identical across all EMB1 files (row i of LBL1 labels
 *     row i of every embedding file);
 *   - an undecodable image is skipped with a log line and excluded from
 *     every model consistently;
 *   - sample ids are the class-relative paths "class/filename".
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { loadEncoder } from "./encoders";
import { BadTemplate, EmptyInput, MissingInput, ModelLoadFailure, UndecodableImage } from "./errors";
import {
  writeEmbeddingFile,
  writeHeadFile,
  writeLabelsFile,
  writeManifest,
  writeSampleIds,
} from "./formats";
import { DecodedImage, decodePng } from "./images";

export interface ExtractJob {
  /** Directory with one subfolder per class. */
  imageRoot: string;
  /** Encoder names, e.g. ["mock-16", "mock-24"]; the first is the mean model. */
  models: string[];
  /** Text file with one class name per line; line order = label index. */
  classesFile: string;
  /** Prompt template with a `{}` class-name placeholder. */
  template: string;
  outDir: string;
  /** Log sink for skip messages (default: console.error). */
  log?: (message: string) => void;
}

export interface ExtractResult {
  samples: number;
  classes: string[];
  /** Class-relative paths of images that failed to decode and were skipped. */
  skipped: string[];
  /** Files written, relative to outDir. */
  written: string[];
}

export function readClassNames(file: string): string[] {
  if (!fs.existsSync(file)) throw new MissingInput(`classes file not found: ${file}`);
  const names = fs
    .readFileSync(file, "utf-8")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
  if (names.length === 0) throw new EmptyInput(`classes file is empty: ${file}`);
  if (new Set(names).size !== names.length) {
    throw new EmptyInput(`classes file repeats a name: ${file}`);
  }
  return names;
}

export function runExtract(job: ExtractJob): ExtractResult {
  const log = job.log ?? ((message: string) => console.error(message));
  if (!job.template.includes("{}")) {
    throw new BadTemplate(
      `template ${JSON.stringify(job.template)} has no {} class-name placeholder`
    );
  }
  if (job.models.length === 0) throw new EmptyInput("need at least one model");
  if (new Set(job.models).size !== job.models.length) {
    throw new ModelLoadFailure("model list repeats a name");
  }
  const classes = readClassNames(job.classesFile);
  // Load every encoder before touching any image, so a bad model name
  // fails fast without partial output.
  const encoders = job.models.map(loadEncoder);

  if (!fs.existsSync(job.imageRoot) || !fs.statSync(job.imageRoot).isDirectory()) {
    throw new MissingInput(`image root is not a directory: ${job.imageRoot}`);
  }

  const sampleIds: string[] = [];
  const labels: number[] = [];
  const images: DecodedImage[] = [];
  const skipped: string[] = [];
  for (const [classIndex, className] of classes.entries()) {
    const dir = path.join(job.imageRoot, className);
    if (!fs.existsSync(dir) || !fs.statSync(dir).isDirectory()) {
      throw new MissingInput(`class folder not found: ${dir}`);
    }
    const files = fs
      .readdirSync(dir)
      .filter((name) => fs.statSync(path.join(dir, name)).isFile())
      .sort();
    if (files.length === 0) throw new EmptyInput(`class folder is empty: ${dir}`);
    let kept = 0;
    for (const file of files) {
      const sampleId = `${className}/${file}`;
      try {
        images.push(decodePng(path.join(dir, file)));
      } catch (err) {
        if (err instanceof UndecodableImage) {
          skipped.push(sampleId);
          log(`skip ${sampleId}: ${err.message}`);
          continue;
        }
        throw err;
      }
      sampleIds.push(sampleId);
      labels.push(classIndex);
      kept++;
    }
    if (kept === 0) {
      throw new EmptyInput(`no decodable image in class folder: ${dir}`);
    }
  }

  fs.mkdirSync(job.outDir, { recursive: true });
  const written: string[] = [];
  const modelEntries: { id: string; emb_path: string }[] = [];
  for (const encoder of encoders) {
    const rows = images.map((image) =>
      Float32Array.from(encoder.embedImage(image))
    );
    const embName = `${encoder.name}.emb`;
    writeEmbeddingFile(path.join(job.outDir, embName), rows, { normalized: true });
    modelEntries.push({ id: encoder.name, emb_path: embName });
    written.push(embName);
  }

  writeLabelsFile(path.join(job.outDir, "labels.lbl"), labels, classes.length);
  written.push("labels.lbl");

  // The zero-shot head comes from the mean model's text tower: one column
  // per class, in class order, from the template-expanded class name.
  const meanEncoder = encoders[0]!;
  const columns = classes.map((name) =>
    Float32Array.from(meanEncoder.embedText(job.template.replace("{}", name)))
  );
  writeHeadFile(path.join(job.outDir, "head.hed"), columns);
  written.push("head.hed");

  writeSampleIds(path.join(job.outDir, "ids.txt"), sampleIds);
  written.push("ids.txt");

  writeManifest(path.join(job.outDir, "manifest.json"), {
    models: modelEntries,
    labels_path: "labels.lbl",
    head_path: "head.hed",
    mean_model_id: meanEncoder.name,
    class_names: classes,
    sample_ids_path: "ids.txt",
  });
  written.push("manifest.json");

  return { samples: sampleIds.length, classes, skipped, written };
}
