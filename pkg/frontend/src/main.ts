import { SessionClient, SocketLike } from "./client";
import { rgbToImageData } from "./frame";
import type { FrameMsg } from "./protocol";
import {
  catalogOptions,
  evalTable,
  executedLogLines,
  stageBadges,
  statusLine,
} from "./render";
import { allowedActions, initialState, reduce, SessionState } from "./state";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

export function wsUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("bridge") ?? `${window.location.hostname || "127.0.0.1"}:8765`;
  return `ws://${host}/session`;
}

export function start(): void {
  const canvas = byId<HTMLCanvasElement>("viewer");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");

  let state: SessionState = initialState();
  const socket = new WebSocket(wsUrl());
  const client = new SessionClient(socket as unknown as SocketLike);

  function drawFrame(msg: FrameMsg): void {
    const { data, width, height } = rgbToImageData(msg.image);
    if (canvas.width !== width || canvas.height !== height) {
      canvas.width = width;
      canvas.height = height;
    }
    ctx!.putImageData(new ImageData(data, width, height), 0, 0);
  }

  function sync(): void {
    byId("status").innerHTML = statusLine(state);
    byId("stages").innerHTML = stageBadges(state.stageStatus);
    byId("log").innerHTML = executedLogLines(state);
    byId("catalog").innerHTML = catalogOptions(state.catalog);
    byId("corrections").textContent = `${state.corrections} corrections`;
    byId("errors").textContent = state.errors.slice(-1)[0] ?? "";
    if (state.evalResult) {
      byId("evaltable").innerHTML = evalTable(
        state.evalResult.before,
        state.evalResult.after,
        state.evalResult.nCorrections,
      );
    }
    const allowed = allowedActions(state);
    byId<HTMLButtonElement>("btn-start").disabled = !allowed.start;
    byId<HTMLButtonElement>("btn-stop").disabled = !allowed.stop;
    byId<HTMLButtonElement>("btn-resume").disabled = !allowed.resume;
    byId<HTMLButtonElement>("btn-send").disabled = !allowed.command;
    byId<HTMLButtonElement>("btn-finetune").disabled = !allowed.finetune;
    const progress = state.finetuneProgress;
    byId("progress").textContent =
      progress === null ? "" : `fine-tuning… ${(100 * progress).toFixed(0)}%`;
  }

  client.onMessage((msg) => {
    state = reduce(state, msg);
    if (msg.type === "frame") drawFrame(msg);
    sync();
  });

  byId("btn-start").onclick = () => {
    const seed = parseInt(byId<HTMLInputElement>("seed").value || "0", 10);
    client.startEpisode(seed, "live");
  };
  byId("btn-stop").onclick = () => client.stop();
  byId("btn-resume").onclick = () => client.resume();
  byId("btn-end").onclick = () => client.endEpisode();
  byId("btn-finetune").onclick = () => client.finetune();
  byId("btn-send").onclick = () => {
    const input = byId<HTMLInputElement>("command");
    if (input.value.trim()) {
      client.command(input.value);
      input.value = "";
    }
  };
  byId<HTMLInputElement>("command").onkeydown = (ev) => {
    if (ev.key === "Enter") byId("btn-send").click();
  };
  sync();
}

if (typeof document !== "undefined" && document.getElementById("viewer")) {
  start();
}
