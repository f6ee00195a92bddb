/**
 * Writes the small deterministic test fixture: two classes ("circles",
 * "stripes") with three 20x20 PNGs each, plus classes.txt.  The pixels are
 * pure functions of the class and image index, so regenerating the fixture
 * reproduces the committed files byte for byte (same pngjs/zlib version).
 *
 * Run via `npm run fixture` after a build.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { PNG } from "pngjs";

import { SplitMix64, hashString } from "./sm64";

const SIZE = 20;
const CLASSES = ["circles", "stripes"] as const;

function circleImage(rng: SplitMix64): PNG {
  const png = new PNG({ width: SIZE, height: SIZE });
  const cx = 6 + rng.float() * 8;
  const cy = 6 + rng.float() * 8;
  const radius = 3 + rng.float() * 4;
  const hue = Math.floor(rng.float() * 200);
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const inside = (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2;
      const idx = (y * SIZE + x) * 4;
      png.data[idx] = inside ? 40 + hue : 230;
      png.data[idx + 1] = inside ? 220 - hue : 230;
      png.data[idx + 2] = inside ? 90 : 240;
      png.data[idx + 3] = 255;
    }
  }
  return png;
}

function stripeImage(rng: SplitMix64): PNG {
  const png = new PNG({ width: SIZE, height: SIZE });
  const period = 2 + Math.floor(rng.float() * 4);
  const phase = Math.floor(rng.float() * period);
  const vertical = rng.float() < 0.5;
  const tint = Math.floor(rng.float() * 120);
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const band = Math.floor(((vertical ? x : y) + phase) / period) % 2 === 0;
      const idx = (y * SIZE + x) * 4;
      png.data[idx] = band ? 30 + tint : 210;
      png.data[idx + 1] = band ? 60 : 190 - tint;
      png.data[idx + 2] = band ? 200 : 80;
      png.data[idx + 3] = 255;
    }
  }
  return png;
}

export function makeFixture(root: string): string[] {
  const written: string[] = [];
  const imagesDir = path.join(root, "images");
  for (const [classIndex, className] of CLASSES.entries()) {
    const dir = path.join(imagesDir, className);
    fs.mkdirSync(dir, { recursive: true });
    for (let i = 0; i < 3; i++) {
      const rng = new SplitMix64(hashString(className), BigInt(i));
      const png = classIndex === 0 ? circleImage(rng) : stripeImage(rng);
      const file = path.join(dir, `${className.slice(0, -1)}_${i}.png`);
      fs.writeFileSync(file, PNG.sync.write(png));
      written.push(file);
    }
  }
  const classesFile = path.join(root, "classes.txt");
  fs.writeFileSync(classesFile, CLASSES.join("\n") + "\n");
  written.push(classesFile);
  return written;
}

if (require.main === module) {
  const root = process.argv[2] ?? path.join(__dirname, "..", "fixtures");
  for (const file of makeFixture(root)) {
    console.log(`wrote ${file}`);
  }
}
