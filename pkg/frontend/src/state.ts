import type { Mode, ServerMsg, SuccessTable } from "./protocol";

/** View model maintained by folding server messages in arrival order. */
export interface SessionState {
  connected: boolean;
  sessionId: string | null;
  lastSeq: number;
  /** seq numbers were observed out of order or with gaps */
  seqViolation: boolean;
  mode: Mode | null;
  t: number;
  activeCommand: string | null;
  confidence: number | null;
  stageStatus: boolean[];
  episodeDone: boolean;
  catalog: string[];
  checkpoints: string[];
  corrections: number;
  executedLog: { t: number; source: string; command: string | null }[];
  finetuneProgress: number | null;
  evalResult: { nCorrections: number; before: SuccessTable; after: SuccessTable } | null;
  errors: string[];
}

export function initialState(): SessionState {
  return {
    connected: false,
    sessionId: null,
    lastSeq: 0,
    seqViolation: false,
    mode: null,
    t: 0,
    activeCommand: null,
    confidence: null,
    stageStatus: [],
    episodeDone: false,
    catalog: [],
    checkpoints: [],
    corrections: 0,
    executedLog: [],
    finetuneProgress: null,
    evalResult: null,
    errors: [],
  };
}

const EXECUTED_LOG_LIMIT = 200;

export function reduce(state: SessionState, msg: ServerMsg): SessionState {
  const next: SessionState = { ...state, connected: true };
  if (msg.seq <= state.lastSeq) next.seqViolation = true;
  next.lastSeq = Math.max(state.lastSeq, msg.seq);
  if (msg.session !== null) next.sessionId = msg.session;

  switch (msg.type) {
    case "status": {
      if (msg.mode !== null) next.mode = msg.mode;
      next.t = msg.t;
      next.activeCommand = msg.command;
      next.confidence = msg.confidence;
      if (msg.stage_status) next.stageStatus = msg.stage_status;
      if (msg.catalog) next.catalog = msg.catalog;
      if (msg.checkpoints) next.checkpoints = msg.checkpoints;
      if (msg.episode_done) next.episodeDone = true;
      next.finetuneProgress =
        msg.mode === "finetuning" ? (msg.progress ?? null) : null;
      break;
    }
    case "frame": {
      next.t = msg.t;
      next.stageStatus = msg.stage_status;
      break;
    }
    case "command_executed": {
      next.executedLog = [
        ...state.executedLog.slice(-(EXECUTED_LOG_LIMIT - 1)),
        { t: msg.t, source: msg.source, command: msg.command },
      ];
      break;
    }
    case "correction_ack": {
      next.corrections = msg.n_session_corrections;
      break;
    }
    case "eval_result": {
      next.evalResult = {
        nCorrections: msg.n_corrections,
        before: msg.before,
        after: msg.after,
      };
      next.finetuneProgress = null;
      break;
    }
    case "error": {
      next.errors = [...state.errors, msg.message];
      break;
    }
  }
  return next;
}

/** Controls enabled for the current mode (drives button disabling). */
export function allowedActions(state: SessionState): {
  start: boolean;
  stop: boolean;
  resume: boolean;
  command: boolean;
  finetune: boolean;
} {
  const running =
    state.mode === "autonomous" ||
    state.mode === "stopped" ||
    state.mode === "override";
  return {
    start: state.mode === "idle" || state.mode === null,
    stop: running && state.mode !== "stopped",
    resume: state.mode === "stopped" || state.mode === "override",
    command: running,
    finetune: state.mode === "idle" && state.corrections > 0,
  };
}
