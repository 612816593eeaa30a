import type { SuccessTable } from "./protocol";
import type { SessionState } from "./state";

/** Pure HTML renderers kept separate from DOM wiring for testability. */

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function stageBadges(stages: boolean[]): string {
  return stages
    .map(
      (ok, i) =>
        `<span class="stage ${ok ? "done" : "pending"}">stage ${i + 1}</span>`,
    )
    .join("");
}

export function statusLine(state: SessionState): string {
  const mode = state.mode ?? "connecting";
  const cmd = state.activeCommand ? escapeHtml(state.activeCommand) : "—";
  const conf =
    state.confidence === null ? "" : ` (${(state.confidence * 100).toFixed(0)}%)`;
  return `t=${state.t} · ${mode} · ${cmd}${conf}`;
}

function pct(x: number): string {
  return `${(100 * x).toFixed(1)}%`;
}

/** Side-by-side before/after success table after a fine-tune round. */
export function evalTable(
  before: SuccessTable,
  after: SuccessTable,
  nCorrections: number,
): string {
  const rows = before.rates
    .map((b, i) => {
      const a = after.rates[i];
      const delta = a - b;
      const sign = delta >= 0 ? "+" : "";
      return (
        `<tr><td>stage ${i + 1}</td><td>${pct(b)}</td><td>${pct(a)}</td>` +
        `<td class="${delta >= 0 ? "gain" : "loss"}">${sign}${pct(delta)}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="eval"><caption>fine-tuned on ${nCorrections} ` +
    `correction${nCorrections === 1 ? "" : "s"} · ${before.n_trials} trials</caption>` +
    `<thead><tr><th>stage</th><th>before</th><th>after</th><th>Δ</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

export function executedLogLines(state: SessionState, limit = 8): string {
  return state.executedLog
    .slice(-limit)
    .map(
      (e) =>
        `<div class="logline"><code>${e.t}</code> [${e.source}] ` +
        `${e.command ? escapeHtml(e.command) : "(hold)"}</div>`,
    )
    .join("");
}

/** Options for the command input's catalog autocomplete. */
export function catalogOptions(catalog: string[]): string {
  return catalog
    .map((c) => `<option value="${escapeHtml(c)}"></option>`)
    .join("");
}
