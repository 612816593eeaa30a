import { describe, expect, it } from "vitest";
import { parseServerMsg, PROTOCOL_VERSION } from "../src/protocol";

const envelope = { v: PROTOCOL_VERSION, session: "s1", seq: 1 };

describe("parseServerMsg", () => {
  it("accepts every known message type", () => {
    for (const type of [
      "frame",
      "status",
      "command_executed",
      "correction_ack",
      "eval_result",
      "error",
    ]) {
      expect(parseServerMsg({ ...envelope, type }).type).toBe(type);
    }
  });

  it("rejects non-objects", () => {
    expect(() => parseServerMsg("status")).toThrow(/must be an object/);
    expect(() => parseServerMsg(null)).toThrow(/must be an object/);
  });

  it("rejects missing envelope fields", () => {
    expect(() => parseServerMsg({ type: "status", seq: 1 })).toThrow(/'v'/);
    expect(() => parseServerMsg({ v: 1, type: "status" })).toThrow(/'seq'/);
  });

  it("rejects a protocol version mismatch", () => {
    expect(() => parseServerMsg({ ...envelope, v: 99, type: "status" })).toThrow(
      /version 99/,
    );
  });

  it("rejects unknown message types", () => {
    expect(() => parseServerMsg({ ...envelope, type: "telemetry" })).toThrow(
      /unknown message type 'telemetry'/,
    );
  });
});
