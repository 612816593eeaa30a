/**
 * Wire types for the operator bridge websocket session.
 * Mirrors docs/protocol.md; every server message carries the envelope
 * fields (v, session, seq, type).
 */

export const PROTOCOL_VERSION = 1;

export interface Envelope {
  v: number;
  session: string | null;
  seq: number;
  type: string;
}

export interface FramePayload {
  height: number;
  width: number;
  /** base64 of raw row-major RGB bytes */
  pixels: string;
}

export interface FrameMsg extends Envelope {
  type: "frame";
  t: number;
  stage_status: boolean[];
  image: FramePayload;
}

export type Mode = "idle" | "autonomous" | "stopped" | "override" | "finetuning";

export interface StatusMsg extends Envelope {
  type: "status";
  t: number;
  mode: Mode | null;
  command: string | null;
  confidence: number | null;
  episode_done?: boolean;
  stage_status?: boolean[];
  catalog?: string[];
  checkpoints?: string[];
  progress?: number;
}

export interface CommandExecutedMsg extends Envelope {
  type: "command_executed";
  t: number;
  source: "hl" | "user" | "hold";
  command: string | null;
}

export interface CorrectionAckMsg extends Envelope {
  type: "correction_ack";
  t: number;
  text: string;
  context_frames: number;
  n_session_corrections: number;
}

export interface SuccessTable {
  n_trials: number;
  successes: number[];
  rates: number[];
  intervals: [number, number][];
}

export interface EvalResultMsg extends Envelope {
  type: "eval_result";
  n_corrections: number;
  before: SuccessTable;
  after: SuccessTable;
}

export interface ErrorMsg extends Envelope {
  type: "error";
  message: string;
}

export type ServerMsg =
  | FrameMsg
  | StatusMsg
  | CommandExecutedMsg
  | CorrectionAckMsg
  | EvalResultMsg
  | ErrorMsg;

export type ClientMsg =
  | { type: "start_episode"; seed: number; pacing?: "live" | "free"; max_steps?: number }
  | { type: "stop"; at_step?: number }
  | { type: "resume"; at_step?: number }
  | { type: "command"; text: string; at_step?: number }
  | { type: "end_episode" }
  | { type: "finetune" }
  | { type: "list_checkpoints" };

/** Narrow an unknown JSON value to a ServerMsg, or explain why not. */
export function parseServerMsg(raw: unknown): ServerMsg {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("server message must be an object");
  }
  const msg = raw as Record<string, unknown>;
  for (const field of ["v", "seq", "type"]) {
    if (!(field in msg)) throw new Error(`missing envelope field '${field}'`);
  }
  if (msg.v !== PROTOCOL_VERSION) {
    throw new Error(`unsupported protocol version ${String(msg.v)}`);
  }
  const known = [
    "frame",
    "status",
    "command_executed",
    "correction_ack",
    "eval_result",
    "error",
  ];
  if (!known.includes(msg.type as string)) {
    throw new Error(`unknown message type '${String(msg.type)}'`);
  }
  return msg as unknown as ServerMsg;
}
