import { createHash } from "node:crypto";

export interface Backend {
  readonly model: string;
  readonly dim: number;
  embed(texts: string[]): Promise<number[][]>;
}

export const MIN_DIM = 8;
export const DEFAULT_DIM = 256;
export const HASH_MODEL = "hash-trigram";

export function charTrigrams(text: string): string[] {
  // code-point slicing, so the client's own fallback embedder (which slices
  // by code point) produces bit-identical vectors
  const chars = Array.from(text.trim());
  if (chars.length === 0) return [];
  if (chars.length < 3) return [chars.join("")];
  const grams: string[] = [];
  for (let i = 0; i + 3 <= chars.length; i++) {
    grams.push(chars.slice(i, i + 3).join(""));
  }
  return grams;
}

function bucketAndSign(gram: string, dim: number): [number, number] {
  const digest = createHash("md5").update(gram, "utf8").digest();
  const bucket = Number(digest.readBigUInt64LE(0) % BigInt(dim));
  const sign = digest[8] % 2 === 0 ? 1 : -1;
  return [bucket, sign];
}

export function hashEmbed(text: string, dim: number): number[] {
  if (dim < MIN_DIM) throw new Error(`dim must be >= ${MIN_DIM}`);
  const grams = charTrigrams(text);
  if (grams.length === 0) throw new Error("cannot embed empty text");
  const vec = new Array<number>(dim).fill(0);
  for (const gram of grams) {
    const [bucket, sign] = bucketAndSign(gram, dim);
    vec[bucket] += sign;
  }
  let norm = Math.sqrt(vec.reduce((acc, v) => acc + v * v, 0));
  if (norm === 0) {
    // signs cancelled exactly; nudge the first gram's bucket, same as the
    // client-side fallback, so the vector stays usable and deterministic
    const [bucket] = bucketAndSign(grams[0], dim);
    vec[bucket] = 1;
    norm = 1;
  }
  return vec.map((v) => v / norm);
}

export class HashingBackend implements Backend {
  readonly model: string;
  readonly dim: number;

  constructor(dim: number = DEFAULT_DIM) {
    if (dim < MIN_DIM) throw new Error(`dim must be >= ${MIN_DIM}`);
    this.dim = dim;
    this.model = `${HASH_MODEL}-${dim}`;
  }

  async embed(texts: string[]): Promise<number[][]> {
    return texts.map((t) => hashEmbed(t, this.dim));
  }
}

/** Mean-pooled, normalized sentence vectors from a transformers checkpoint. */
class TransformerBackend implements Backend {
  readonly model: string;
  readonly dim: number;
  private extractor: any;

  private constructor(model: string, dim: number, extractor: any) {
    this.model = model;
    this.dim = dim;
    this.extractor = extractor;
  }

  static async load(model: string): Promise<TransformerBackend> {
    let transformers: any;
    try {
      transformers = await import("@xenova/transformers");
    } catch {
      throw new Error(
        `model ${model} needs the optional @xenova/transformers package; ` +
          `install it or use the default ${HASH_MODEL} backend`
      );
    }
    const extractor = await transformers.pipeline("feature-extraction", model);
    const probe = await extractor(["probe"], { pooling: "mean", normalize: true });
    const dim = probe.dims[probe.dims.length - 1];
    return new TransformerBackend(model, dim, extractor);
  }

  async embed(texts: string[]): Promise<number[][]> {
    const out = await this.extractor(texts, { pooling: "mean", normalize: true });
    const data: number[] = Array.from(out.data);
    const vectors: number[][] = [];
    for (let i = 0; i < texts.length; i++) {
      vectors.push(data.slice(i * this.dim, (i + 1) * this.dim));
    }
    return vectors;
  }
}

export async function loadBackend(model: string, dim: number): Promise<Backend> {
  if (model === HASH_MODEL || model.startsWith(`${HASH_MODEL}-`)) {
    return new HashingBackend(dim);
  }
  return TransformerBackend.load(model);
}
