/**
 * Encoder registry.
 *
 * Real pretrained backbones (clip-rn50, dino-rn50, moco-rn50) are recognised
 * names, but their weights are not bundled with this tool; requesting one
 * raises ModelLoadFailure that says how to proceed.  For pipeline testing the
 * registry provides `mock-<D>` encoders: deterministic seeded projections of
 * the preprocessing grid (images) or a byte histogram (text).  Mock encoders
 * honour every contract of a real one — fixed dimension, L2-normalized
 * output, identical input -> identical output — so file formats, alignment,
 * and determinism can be exercised end to end without network or weights.
 */

import { ModelLoadFailure } from "./errors";
import { DecodedImage, GRID_FEATURES, gridFeatures } from "./images";
import { SplitMix64, hashString } from "./sm64";

const REAL_BACKBONES = new Set(["clip-rn50", "dino-rn50", "moco-rn50"]);
const MOCK_PATTERN = /^mock-(\d+)$/;
const TEXT_BUCKETS = 256;

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  embedImage(image: DecodedImage): Float64Array;
  embedText(text: string): Float64Array;
}

function normalize(vector: Float64Array): Float64Array {
  let sum = 0.0;
  for (const v of vector) sum += v * v;
  const norm = Math.sqrt(sum);
  if (norm === 0.0) throw new ModelLoadFailure("encoder produced a zero vector");
  for (let i = 0; i < vector.length; i++) vector[i]! /= norm;
  return vector;
}

/** dim x (features + 1) Gaussian matrix drawn from a named stream. */
function projectionMatrix(seed: bigint, stream: number, dim: number, features: number): Float64Array {
  const rng = new SplitMix64(seed, stream);
  const matrix = new Float64Array(dim * (features + 1));
  for (let i = 0; i < matrix.length; i++) matrix[i] = rng.gauss();
  return matrix;
}

function project(matrix: Float64Array, dim: number, input: Float64Array): Float64Array {
  const cols = input.length + 1;
  const out = new Float64Array(dim);
  for (let r = 0; r < dim; r++) {
    let acc = matrix[r * cols + input.length]!; // bias column keeps output nonzero
    for (let c = 0; c < input.length; c++) {
      acc += matrix[r * cols + c]! * input[c]!;
    }
    out[r] = acc;
  }
  return out;
}

class MockEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  private readonly imageMatrix: Float64Array;
  private readonly textMatrix: Float64Array;

  constructor(name: string, dim: number) {
    this.name = name;
    this.dim = dim;
    const seed = hashString(name);
    this.imageMatrix = projectionMatrix(seed, 0, dim, GRID_FEATURES);
    this.textMatrix = projectionMatrix(seed, 1, dim, TEXT_BUCKETS);
  }

  embedImage(image: DecodedImage): Float64Array {
    return normalize(project(this.imageMatrix, this.dim, gridFeatures(image)));
  }

  embedText(text: string): Float64Array {
    const bytes = Buffer.from(text, "utf-8");
    const histogram = new Float64Array(TEXT_BUCKETS);
    for (const byte of bytes) histogram[byte]! += 1;
    if (bytes.length > 0) {
      for (let i = 0; i < histogram.length; i++) histogram[i]! /= bytes.length;
    }
    return normalize(project(this.textMatrix, this.dim, histogram));
  }
}

export function loadEncoder(name: string): Encoder {
  const mock = MOCK_PATTERN.exec(name);
  if (mock) {
    const dim = Number(mock[1]);
    if (dim < 1 || dim > 65536) {
      throw new ModelLoadFailure(`mock encoder dimension ${mock[1]} out of range`);
    }
    return new MockEncoder(name, dim);
  }
  if (REAL_BACKBONES.has(name)) {
    throw new ModelLoadFailure(
      `${name} weights are not bundled with this tool; install the backbone ` +
        `and point the extractor at it, or use a mock-<dim> encoder for ` +
        `format and pipeline testing`
    );
  }
  throw new ModelLoadFailure(
    `unknown model ${JSON.stringify(name)}; expected one of ` +
      `${[...REAL_BACKBONES].sort().join(", ")} or mock-<dim>`
  );
}
