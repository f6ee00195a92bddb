/**
 * Image decoding and the fixed preprocessing grid.
 *
 * v1 decodes PNG only.  Preprocessing is deterministic and augmentation-free:
 * every image is reduced to an 8 x 8 grid of RGB samples taken at cell
 * centers (nearest neighbor), scaled to [0, 1].  The same grid feeds every
 * encoder, so a sample is either present in all embedding files or in none.
 */

import * as fs from "node:fs";

import { PNG } from "pngjs";

import { UndecodableImage } from "./errors";

export const GRID = 8;
export const GRID_FEATURES = GRID * GRID * 3;

export interface DecodedImage {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel, row-major. */
  data: Buffer;
}

export function decodePng(file: string): DecodedImage {
  let bytes: Buffer;
  try {
    bytes = fs.readFileSync(file);
  } catch (err) {
    throw new UndecodableImage(`cannot read ${file}: ${(err as Error).message}`);
  }
  try {
    const png = PNG.sync.read(bytes);
    return { width: png.width, height: png.height, data: png.data };
  } catch (err) {
    throw new UndecodableImage(`cannot decode ${file}: ${(err as Error).message}`);
  }
}

/** Sample the image at GRID x GRID cell centers; returns RGB values in [0, 1]. */
export function gridFeatures(image: DecodedImage): Float64Array {
  const out = new Float64Array(GRID_FEATURES);
  let k = 0;
  for (let gy = 0; gy < GRID; gy++) {
    const py = Math.min(
      image.height - 1,
      Math.floor(((gy + 0.5) * image.height) / GRID)
    );
    for (let gx = 0; gx < GRID; gx++) {
      const px = Math.min(
        image.width - 1,
        Math.floor(((gx + 0.5) * image.width) / GRID)
      );
      const base = (py * image.width + px) * 4;
      out[k++] = image.data[base]! / 255;
      out[k++] = image.data[base + 1]! / 255;
      out[k++] = image.data[base + 2]! / 255;
    }
  }
  return out;
}
