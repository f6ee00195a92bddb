/**
 * Writers for the binary embedding-file formats and their manifest.
 *
 * All integers and floats are little-endian regardless of host platform.
 *
 *   EMB1: "EMB1" + u32 version(=1) + u64 N + u32 D + u8 dtype(0 = float32)
 *         + u8 normalized + 6 zero bytes, then N*D float32 row-major.
 *   LBL1: "LBL1" + u64 N + u32 C, then N u32 labels in [0, C).
 *   HED1: "HED1" + u32 D + u32 C, then D*C float32 column-major
 *         (class 0's D values first).
 *
 * Every write is atomic: the bytes go to a `.tmp` sibling which is then
 * renamed over the target, so a crash never leaves a half-written file.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { DimensionMismatch, EmptyInput, NormViolation } from "./errors";

/** Writers guarantee unit norms at least this tight (after the f32 cast). */
export const NORM_WRITE_TOL = 1e-5;

const EMB_MAGIC = "EMB1";
const LBL_MAGIC = "LBL1";
const HED_MAGIC = "HED1";
const EMB_HEADER_SIZE = 28;
const LBL_HEADER_SIZE = 16;
const HED_HEADER_SIZE = 12;

function atomicWrite(target: string, bytes: Buffer | string): void {
  const tmp = path.join(
    path.dirname(target),
    `.${path.basename(target)}.tmp`
  );
  fs.writeFileSync(tmp, bytes);
  fs.renameSync(tmp, target);
}

function rowNorm(row: Float32Array): number {
  let sum = 0.0;
  for (const v of row) sum += v * v;
  return Math.sqrt(sum);
}

/** Write an EMB1 file from an N x D row-major matrix. */
export function writeEmbeddingFile(
  target: string,
  rows: Float32Array[],
  options: { normalized: boolean }
): void {
  const n = rows.length;
  if (n < 1) throw new EmptyInput("embedding matrix needs at least one row");
  const first = rows[0]!;
  const d = first.length;
  if (d < 1) throw new EmptyInput("embedding matrix needs at least one column");
  const buf = Buffer.alloc(EMB_HEADER_SIZE + n * d * 4);
  buf.write(EMB_MAGIC, 0, "ascii");
  buf.writeUInt32LE(1, 4); // version
  buf.writeBigUInt64LE(BigInt(n), 8);
  buf.writeUInt32LE(d, 16);
  buf.writeUInt8(0, 20); // dtype: float32
  buf.writeUInt8(options.normalized ? 1 : 0, 21);
  // bytes 22..27 stay zero (padding)
  let offset = EMB_HEADER_SIZE;
  for (const [i, row] of rows.entries()) {
    if (row.length !== d) {
      throw new DimensionMismatch(`row ${i} has ${row.length} values, expected ${d}`);
    }
    if (options.normalized && Math.abs(rowNorm(row) - 1.0) > NORM_WRITE_TOL) {
      throw new NormViolation(`row ${i} is not unit norm after the float32 cast`);
    }
    for (const value of row) {
      buf.writeFloatLE(value, offset);
      offset += 4;
    }
  }
  atomicWrite(target, buf);
}

/** Write an LBL1 file: one u32 class index per sample, classes in [0, C). */
export function writeLabelsFile(
  target: string,
  labels: number[],
  numClasses: number
): void {
  if (labels.length < 1) throw new EmptyInput("labels must be non-empty");
  if (numClasses < 1) throw new DimensionMismatch("need at least one class");
  const buf = Buffer.alloc(LBL_HEADER_SIZE + labels.length * 4);
  buf.write(LBL_MAGIC, 0, "ascii");
  buf.writeBigUInt64LE(BigInt(labels.length), 4);
  buf.writeUInt32LE(numClasses, 12);
  for (const [i, label] of labels.entries()) {
    if (!Number.isInteger(label) || label < 0 || label >= numClasses) {
      throw new DimensionMismatch(`label ${label} outside [0, ${numClasses})`);
    }
    buf.writeUInt32LE(label, LBL_HEADER_SIZE + i * 4);
  }
  atomicWrite(target, buf);
}

/** Write a HED1 file from per-class columns (each of length D, unit norm). */
export function writeHeadFile(target: string, columns: Float32Array[]): void {
  const c = columns.length;
  if (c < 1) throw new EmptyInput("head needs at least one class column");
  const d = columns[0]!.length;
  if (d < 1) throw new EmptyInput("head columns need at least one dimension");
  const buf = Buffer.alloc(HED_HEADER_SIZE + d * c * 4);
  buf.write(HED_MAGIC, 0, "ascii");
  buf.writeUInt32LE(d, 4);
  buf.writeUInt32LE(c, 8);
  let offset = HED_HEADER_SIZE;
  for (const [j, column] of columns.entries()) {
    if (column.length !== d) {
      throw new DimensionMismatch(`column ${j} has ${column.length} values, expected ${d}`);
    }
    if (Math.abs(rowNorm(column) - 1.0) > NORM_WRITE_TOL) {
      throw new NormViolation(`head column ${j} is not unit norm after the float32 cast`);
    }
    for (const value of column) {
      buf.writeFloatLE(value, offset);
      offset += 4;
    }
  }
  atomicWrite(target, buf);
}

/** Write the sample-id file: one id per line, newline-terminated. */
export function writeSampleIds(target: string, ids: string[]): void {
  if (ids.length < 1) throw new EmptyInput("sample ids must be non-empty");
  atomicWrite(target, ids.join("\n") + "\n");
}

export interface ManifestSpec {
  models: { id: string; emb_path: string }[];
  labels_path?: string;
  head_path?: string;
  mean_model_id?: string;
  class_names?: string[];
  sample_ids_path?: string;
}

/** Recursively sort object keys and drop undefined values. */
function canonicalize(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(canonicalize);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
    for (const [key, v] of entries) out[key] = canonicalize(v);
    return out;
  }
  return value;
}

/** Write the manifest JSON with sorted keys, two-space indent, trailing newline. */
export function writeManifest(target: string, spec: ManifestSpec): void {
  atomicWrite(target, JSON.stringify(canonicalize(spec), null, 2) + "\n");
}
