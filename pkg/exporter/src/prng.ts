/** Deterministic counter-based PRNG (splitmix64 over a (seed, stream,
 * counter) key). Stateless per counter value, so any draw can be
 * recomputed independently of call order; the class wrapper just tracks
 * the counter for convenience.
 */

const MASK64 = (1n << 64n) - 1n;

function splitmix64(x: bigint): bigint {
  x = (x + 0x9e3779b97f4a7c15n) & MASK64;
  let z = x;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return (z ^ (z >> 31n)) & MASK64;
}

export function mix(seed: bigint, stream: bigint, counter: bigint): bigint {
  // chain two rounds so (seed, stream, counter) tuples decorrelate
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

export class CounterRng {
  private counter = 0n;

  constructor(
    private readonly seed: bigint,
    private readonly stream: bigint,
  ) {}

  /** uniform in [0, 1) with 53-bit resolution */
  float(): number {
    const bits = mix(this.seed, this.stream, this.counter++);
    return Number(bits >> 11n) / 2 ** 53;
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.float();
  }

  /** integer in [lo, hi] inclusive */
  int(lo: number, hi: number): number {
    return lo + Math.floor(this.float() * (hi - lo + 1));
  }

  /** standard normal (Box-Muller; consumes two draws) */
  normal(): number {
    const u = Math.max(this.float(), 1e-12);
    const v = this.float();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }

  pick<T>(items: readonly T[]): T {
    return items[this.int(0, items.length - 1)];
  }
}

/** FNV-1a 64-bit content hash, used to key per-image streams. */
export function fnv1a64(data: Uint8Array): bigint {
  let hash = 0xcbf29ce484222325n;
  for (const byte of data) {
    hash ^= BigInt(byte);
    hash = (hash * 0x100000001b3n) & MASK64;
  }
  return hash;
}
