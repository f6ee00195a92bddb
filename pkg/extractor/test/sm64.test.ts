import { describe, expect, it } from "vitest";

import { SplitMix64, hashString, mix64 } from "../src/sm64";

// Golden outputs shared with the embedding-file consumer's generator; if
// either side drifts, cross-language reproducibility is broken.
const GOLDEN_42_0 = [0xca685846b557f0fcn, 0x0d5ec61fa641d02en, 0x45d46229cc936c2bn];
const GOLDEN_42_1 = 0x0b80371c89e23aa6n;
const GOLDEN_0_0 = 0x568a9b0b1a2c05ecn;
const GOLDEN_123_5 = [
  0xaf6f481b4b92cedcn,
  0x77bc579e24d6b1b1n,
  0x2c4922844d621b0cn,
  0xb03e35bf8f78f48an,
];

describe("SplitMix64", () => {
  it("reproduces the shared golden sequence for (42, 0)", () => {
    const rng = new SplitMix64(42n, 0n);
    for (const expected of GOLDEN_42_0) {
      expect(rng.next()).toBe(expected);
    }
  });

  it("reproduces golden values for other (seed, stream) pairs", () => {
    expect(new SplitMix64(42n, 1n).next()).toBe(GOLDEN_42_1);
    expect(new SplitMix64(0n, 0n).next()).toBe(GOLDEN_0_0);
    const rng = new SplitMix64(123n, 5n);
    for (const expected of GOLDEN_123_5) {
      expect(rng.next()).toBe(expected);
    }
  });

  it("accepts number seeds and streams", () => {
    expect(new SplitMix64(42, 0).next()).toBe(GOLDEN_42_0[0]);
    expect(new SplitMix64(42, 1).next()).toBe(GOLDEN_42_1);
  });

  it("separates streams of the same seed", () => {
    const a = new SplitMix64(7n, 0n);
    const b = new SplitMix64(7n, 1n);
    const aValues = [a.next(), a.next(), a.next()];
    const bValues = [b.next(), b.next(), b.next()];
    expect(aValues).not.toEqual(bValues);
  });

  it("float() is the top 53 bits over 2^53, inside [0, 1)", () => {
    const rng = new SplitMix64(42n, 0n);
    const expected = Number(GOLDEN_42_0[0]! >> 11n) / 2 ** 53;
    expect(rng.float()).toBe(expected);
    for (let i = 0; i < 1000; i++) {
      const u = rng.float();
      expect(u).toBeGreaterThanOrEqual(0);
      expect(u).toBeLessThan(1);
    }
  });

  it("gauss() is deterministic with a plausible spread", () => {
    const a = new SplitMix64(9n, 2n);
    const b = new SplitMix64(9n, 2n);
    const draws: number[] = [];
    for (let i = 0; i < 2000; i++) {
      const value = a.gauss();
      expect(b.gauss()).toBe(value);
      draws.push(value);
    }
    const mean = draws.reduce((s, v) => s + v, 0) / draws.length;
    const variance = draws.reduce((s, v) => s + (v - mean) ** 2, 0) / draws.length;
    expect(Math.abs(mean)).toBeLessThan(0.1);
    expect(variance).toBeGreaterThan(0.8);
    expect(variance).toBeLessThan(1.2);
  });
});

describe("mix64", () => {
  it("fixes the zero point of the raw mixer", () => {
    expect(mix64(0n)).toBe(0n);
    expect(mix64(1n)).not.toBe(1n);
  });
});

describe("hashString", () => {
  it("is deterministic and name-sensitive", () => {
    expect(hashString("mock-16")).toBe(hashString("mock-16"));
    expect(hashString("mock-16")).not.toBe(hashString("mock-24"));
    expect(hashString("")).toBe(0xcbf29ce484222325n);
  });

  it("hashes UTF-8 bytes, not UTF-16 code units", () => {
    expect(hashString("é")).not.toBe(hashString("e"));
    // FNV-1a of the two bytes 0xC3 0xA9
    let h = 0xcbf29ce484222325n;
    for (const byte of [0xc3, 0xa9]) {
      h = ((h ^ BigInt(byte)) * 0x100000001b3n) & ((1n << 64n) - 1n);
    }
    expect(hashString("é")).toBe(h);
  });
});
