import type { ClientMsg, ServerMsg } from "./protocol";
import { parseServerMsg } from "./protocol";

/** Minimal structural WebSocket so tests can inject a fake transport. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev: unknown) => void) | null;
}

export type MsgHandler = (msg: ServerMsg) => void;

/**
 * Thin session client: JSON encoding, message parsing, and dispatch.
 * All state interpretation lives in the reducer (state.ts).
 */
export class SessionClient {
  private socket: SocketLike;
  private handlers: MsgHandler[] = [];
  private parseErrors: string[] = [];

  constructor(socket: SocketLike) {
    this.socket = socket;
    socket.onmessage = (ev) => {
      let msg: ServerMsg;
      try {
        msg = parseServerMsg(JSON.parse(ev.data));
      } catch (e) {
        this.parseErrors.push(String(e));
        return;
      }
      for (const h of this.handlers) h(msg);
    };
  }

  onMessage(handler: MsgHandler): void {
    this.handlers.push(handler);
  }

  get badMessages(): readonly string[] {
    return this.parseErrors;
  }

  private send(msg: ClientMsg): void {
    this.socket.send(JSON.stringify(msg));
  }

  startEpisode(seed: number, pacing: "live" | "free" = "live", maxSteps?: number): void {
    this.send({ type: "start_episode", seed, pacing, max_steps: maxSteps });
  }

  stop(atStep?: number): void {
    this.send({ type: "stop", at_step: atStep });
  }

  resume(atStep?: number): void {
    this.send({ type: "resume", at_step: atStep });
  }

  command(text: string, atStep?: number): void {
    if (!text.trim()) throw new Error("command text must be non-empty");
    this.send({ type: "command", text, at_step: atStep });
  }

  endEpisode(): void {
    this.send({ type: "end_episode" });
  }

  finetune(): void {
    this.send({ type: "finetune" });
  }

  listCheckpoints(): void {
    this.send({ type: "list_checkpoints" });
  }

  close(): void {
    this.socket.close();
  }
}
