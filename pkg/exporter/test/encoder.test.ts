import { PNG } from "pngjs";
import { describe, expect, it } from "vitest";

import { encodeImage, encodeText, imageFeatures, textFeatures } from "../src/encoder";
import { getProfile } from "../src/profiles";

function makePng(width: number, height: number, paint: (x: number, y: number) => [number, number, number]): Buffer {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = 4 * (y * width + x);
      const [r, g, b] = paint(x, y);
      png.data[idx] = r;
      png.data[idx + 1] = g;
      png.data[idx + 2] = b;
      png.data[idx + 3] = 255;
    }
  }
  return PNG.sync.write(png);
}

const b32 = getProfile("clip-b32");

describe("image encoder", () => {
  it("is deterministic for identical bytes", () => {
    const png = makePng(40, 30, (x, y) => [x * 5, y * 7, (x + y) * 3]);
    const a = encodeImage(png, b32);
    const b = encodeImage(png, b32);
    expect(Array.from(a)).toEqual(Array.from(b));
  });

  it("separates visually different images", () => {
    const dark = encodeImage(makePng(20, 20, () => [10, 10, 10]), b32);
    const striped = encodeImage(makePng(20, 20, (x) => [x % 2 ? 250 : 0, 30, 180]), b32);
    let dot = 0;
    let na = 0;
    let nb = 0;
    for (let i = 0; i < dark.length; i++) {
      dot += dark[i] * striped[i];
      na += dark[i] ** 2;
      nb += striped[i] ** 2;
    }
    expect(dot / Math.sqrt(na * nb)).toBeLessThan(0.9);
  });

  it("matches the profile dimension", () => {
    const png = makePng(8, 8, () => [100, 150, 200]);
    expect(encodeImage(png, getProfile("clip-b32")).length).toBe(512);
    expect(encodeImage(png, getProfile("clip-l14")).length).toBe(768);
  });

  it("pools by area: constant images agree across covering sizes", () => {
    const small = imageFeatures(16, 16, makeRgba(16, 16, [50, 100, 150]));
    const large = imageFeatures(64, 64, makeRgba(64, 64, [50, 100, 150]));
    for (let i = 0; i < small.length; i++) {
      expect(Math.abs(small[i] - large[i])).toBeLessThan(1e-9);
    }
  });
});

function makeRgba(width: number, height: number, [r, g, b]: [number, number, number]): Buffer {
  const raw = Buffer.alloc(4 * width * height);
  for (let i = 0; i < width * height; i++) {
    raw[4 * i] = r;
    raw[4 * i + 1] = g;
    raw[4 * i + 2] = b;
    raw[4 * i + 3] = 255;
  }
  return raw;
}

describe("text encoder", () => {
  it("is deterministic and dimension-correct", () => {
    const a = encodeText("a person pours coffee", b32);
    const b = encodeText("a person pours coffee", b32);
    expect(Array.from(a)).toEqual(Array.from(b));
    expect(a.length).toBe(512);
  });

  it("separates unrelated sentences", () => {
    const a = textFeatures("a man rides a horse along the beach");
    const b = textFeatures("quarterly revenue grew by twelve percent");
    let dot = 0;
    for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
    expect(Math.abs(dot) / a.length).toBeLessThan(0.5);
  });
});
