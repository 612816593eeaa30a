import { describe, expect, it } from "vitest";
import { base64ToBytes, rgbToImageData } from "../src/frame";

function b64(bytes: number[]): string {
  return Buffer.from(Uint8Array.from(bytes)).toString("base64");
}

describe("base64ToBytes", () => {
  it("round-trips arbitrary bytes", () => {
    const bytes = Array.from({ length: 300 }, (_, i) => (i * 37) % 256);
    expect(Array.from(base64ToBytes(b64(bytes)))).toEqual(bytes);
  });

  it("decodes the empty string", () => {
    expect(base64ToBytes("").length).toBe(0);
  });
});

describe("rgbToImageData", () => {
  it("expands RGB to opaque RGBA preserving channel order", () => {
    const pixels = b64([10, 20, 30, 40, 50, 60]); // 2x1 image
    const { data, width, height } = rgbToImageData({ width: 2, height: 1, pixels });
    expect(width).toBe(2);
    expect(height).toBe(1);
    expect(Array.from(data)).toEqual([10, 20, 30, 255, 40, 50, 60, 255]);
  });

  it("rejects payloads whose byte count disagrees with the dimensions", () => {
    const pixels = b64([1, 2, 3]);
    expect(() => rgbToImageData({ width: 2, height: 2, pixels })).toThrow(/expected 12/);
  });
});
