import type { FramePayload } from "./protocol";

/** Decode base64 without relying on browser atob (works under node too). */
export function base64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return Uint8Array.from(Buffer.from(b64, "base64"));
}

/**
 * Raw row-major RGB -> RGBA pixel buffer suitable for
 * `new ImageData(data, width, height)` + `putImageData`.
 */
export function rgbToImageData(payload: FramePayload): {
  data: Uint8ClampedArray<ArrayBuffer>;
  width: number;
  height: number;
} {
  const rgb = base64ToBytes(payload.pixels);
  const n = payload.width * payload.height;
  if (rgb.length !== n * 3) {
    throw new Error(
      `frame payload is ${rgb.length} bytes, expected ${n * 3} for ` +
        `${payload.width}x${payload.height} RGB`,
    );
  }
  const rgba = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    rgba[4 * i] = rgb[3 * i];
    rgba[4 * i + 1] = rgb[3 * i + 1];
    rgba[4 * i + 2] = rgb[3 * i + 2];
    rgba[4 * i + 3] = 255;
  }
  return { data: rgba, width: payload.width, height: payload.height };
}
