/**
 * SplitMix64 with numbered sub-streams, on exact 64-bit BigInt arithmetic.
 *
 * State update: `state += 0x9E3779B97F4A7C15 (mod 2^64)`; output is the
 * two-round xor-shift-multiply finalizer with multipliers 0xBF58476D1CE4E5B9
 * and 0x94D049BB133111EB (Steele, Lea & Flood 2014).  The initial state is
 * `mix64(seed XOR mix64((stream + 1) * GAMMA))` so distinct (seed, stream)
 * pairs give decorrelated sequences.  This matches the generator used by the
 * embedding-file consumer, so the two codebases can share golden values.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MULT1 = 0xbf58476d1ce4e5b9n;
const MULT2 = 0x94d049bb133111ebn;

export function mix64(z: bigint): bigint {
  z &= MASK64;
  z = ((z ^ (z >> 30n)) * MULT1) & MASK64;
  z = ((z ^ (z >> 27n)) * MULT2) & MASK64;
  return z ^ (z >> 31n);
}

/** FNV-1a 64-bit hash of a UTF-8 string, for deriving seeds from names. */
export function hashString(text: string): bigint {
  let h = 0xcbf29ce484222325n;
  for (const byte of Buffer.from(text, "utf-8")) {
    h = ((h ^ BigInt(byte)) * 0x100000001b3n) & MASK64;
  }
  return h;
}

export class SplitMix64 {
  private state: bigint;
  private spareGauss: number | null = null;

  constructor(seed: bigint | number, stream: bigint | number = 0) {
    const s = BigInt(seed) & MASK64;
    const t = BigInt(stream) & MASK64;
    this.state = mix64(s ^ mix64(((t + 1n) * GAMMA) & MASK64));
  }

  /** Next raw 64-bit output. */
  next(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    return mix64(this.state);
  }

  /** Uniform float64 in [0, 1) using the top 53 bits. */
  float(): number {
    return Number(this.next() >> 11n) / 2 ** 53;
  }

  /** Standard normal via Box-Muller (deterministic, platform-independent). */
  gauss(): number {
    if (this.spareGauss !== null) {
      const value = this.spareGauss;
      this.spareGauss = null;
      return value;
    }
    // u1 must be strictly positive for the log
    const u1 = Math.max(this.float(), 2 ** -53);
    const u2 = this.float();
    const radius = Math.sqrt(-2.0 * Math.log(u1));
    this.spareGauss = radius * Math.sin(2.0 * Math.PI * u2);
    return radius * Math.cos(2.0 * Math.PI * u2);
  }
}
