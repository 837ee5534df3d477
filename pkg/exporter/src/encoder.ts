/** Deterministic offline encoder.
 *
 * Images are area-averaged to a 16x16 RGB patch grid (768 raw features)
 * and texts are hashed character trigrams over the same 768 bins; both go
 * through one fixed seeded random projection to the backbone's output
 * dimension. Not a learned model: the point is a reproducible, dimension-
 * correct, content-sensitive embedding so the file contract and the
 * downstream engine can be exercised without model weights. Swap in a real
 * CLIP checkpoint behind the same interface for production embeddings.
 */

import { PNG } from "pngjs";
import { EncoderProfile } from "./profiles";

export const RAW_FEATURES = 16 * 16 * 3;

/** mulberry32: tiny deterministic PRNG, same stream on every platform. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const projectionCache = new Map<number, Float64Array>();

function projection(dim: number): Float64Array {
  let matrix = projectionCache.get(dim);
  if (!matrix) {
    const rand = mulberry32(0x51f7a3 ^ dim);
    matrix = new Float64Array(dim * RAW_FEATURES);
    const scale = 1.0 / Math.sqrt(RAW_FEATURES);
    for (let i = 0; i < matrix.length; i++) {
      // Box-Muller from two uniforms keeps the projection near-orthogonal
      const u = Math.max(rand(), 1e-12);
      const v = rand();
      matrix[i] = Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v) * scale;
    }
    projectionCache.set(dim, matrix);
  }
  return matrix;
}

function project(features: Float64Array, dim: number): Float32Array {
  const matrix = projection(dim);
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    let acc = 0.0;
    const base = i * RAW_FEATURES;
    for (let j = 0; j < RAW_FEATURES; j++) {
      acc += matrix[base + j] * features[j];
    }
    out[i] = acc;
  }
  return out;
}

function standardize(features: Float64Array): Float64Array {
  let mean = 0.0;
  for (const v of features) mean += v;
  mean /= features.length;
  let varsum = 0.0;
  for (const v of features) varsum += (v - mean) * (v - mean);
  const std = Math.sqrt(varsum / features.length) || 1.0;
  for (let i = 0; i < features.length; i++) {
    features[i] = (features[i] - mean) / std;
  }
  return features;
}

export function decodePng(buffer: Buffer): { width: number; height: number; rgba: Buffer } {
  const png = PNG.sync.read(buffer);
  return { width: png.width, height: png.height, rgba: png.data };
}

/** Area-average the RGBA pixels onto a 16x16 RGB grid. */
export function imageFeatures(width: number, height: number, rgba: Buffer): Float64Array {
  const grid = 16;
  const sums = new Float64Array(RAW_FEATURES);
  const counts = new Float64Array(grid * grid);
  for (let y = 0; y < height; y++) {
    const gy = Math.min(grid - 1, Math.floor((y * grid) / height));
    for (let x = 0; x < width; x++) {
      const gx = Math.min(grid - 1, Math.floor((x * grid) / width));
      const cell = gy * grid + gx;
      const px = 4 * (y * width + x);
      sums[3 * cell] += rgba[px] / 255;
      sums[3 * cell + 1] += rgba[px + 1] / 255;
      sums[3 * cell + 2] += rgba[px + 2] / 255;
      counts[cell] += 1;
    }
  }
  for (let cell = 0; cell < counts.length; cell++) {
    const n = counts[cell] || 1;
    sums[3 * cell] /= n;
    sums[3 * cell + 1] /= n;
    sums[3 * cell + 2] /= n;
  }
  return standardize(sums);
}

/** FNV-1a over a string, 32-bit. */
function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Character-trigram counts hashed onto the shared feature bins. */
export function textFeatures(text: string): Float64Array {
  const bins = new Float64Array(RAW_FEATURES);
  const padded = `  ${text.toLowerCase().trim()}  `;
  for (let i = 0; i + 3 <= padded.length; i++) {
    const gram = padded.slice(i, i + 3);
    const h = fnv1a(gram);
    bins[h % RAW_FEATURES] += 1.0;
    // a second signed slot decorrelates colliding trigrams
    bins[(h >>> 8) % RAW_FEATURES] += (h & 1) === 0 ? 0.5 : -0.5;
  }
  return standardize(bins);
}

export function encodeImage(buffer: Buffer, profile: EncoderProfile): Float32Array {
  const { width, height, rgba } = decodePng(buffer);
  return project(imageFeatures(width, height, rgba), profile.dim);
}

export function encodeText(text: string, profile: EncoderProfile): Float32Array {
  return project(textFeatures(text), profile.dim);
}
