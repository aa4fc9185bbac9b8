/**
 * Client session state and its transitions.
 *
 * The server is the single source of truth: preview, bank view, and the
 * parameters version only ever change by applying a server payload.  The
 * client never computes parameters and never shows unconfirmed changes;
 * while a mutation is in flight the pending flag disables further input.
 */

import type { MemoryAttribute, PreviewData, SessionState } from "./api.js";

export type Speaker = "user" | "system";

export interface TranscriptEntry {
  speaker: Speaker;
  text: string;
  failed?: boolean;
}

export interface ClientSessionState {
  sessionId: string | null;
  transcript: TranscriptEntry[];
  preview: PreviewData | null;
  parametersVersion: number;
  bank: MemoryAttribute[];
  pending: boolean;
}

export function initialState(): ClientSessionState {
  return {
    sessionId: null,
    transcript: [],
    preview: null,
    parametersVersion: 0,
    bank: [],
    pending: false,
  };
}

/** Mark a user turn as sent and lock the input. */
export function beginTurn(state: ClientSessionState, text: string): ClientSessionState {
  return {
    ...state,
    pending: true,
    transcript: [...state.transcript, { speaker: "user", text }],
  };
}

/** Fold an acknowledged server state into the client state. */
export function applyServerState(
  state: ClientSessionState,
  server: SessionState,
): ClientSessionState {
  const transcript = [...state.transcript];
  if (server.feedback !== undefined) {
    transcript.push({ speaker: "system", text: server.feedback, failed: server.failed ?? false });
  }
  return {
    ...state,
    sessionId: server.session_id,
    transcript,
    preview: server.parameters.preview,
    parametersVersion: server.parameters_version,
    bank: server.memory.attributes,
    pending: false,
  };
}

/** Transport failure: unlock input, flag the turn, change nothing else. */
export function failTurn(state: ClientSessionState, reason: string): ClientSessionState {
  const transcript = [...state.transcript];
  for (let i = transcript.length - 1; i >= 0; i--) {
    if (transcript[i].speaker === "user") {
      transcript[i] = { ...transcript[i], failed: true };
      break;
    }
  }
  transcript.push({ speaker: "system", text: `(request failed: ${reason})`, failed: true });
  return { ...state, transcript, pending: false };
}

/** Strength the bank currently stores for an attribute, if any. */
export function bankStrength(state: ClientSessionState, attribute: string): number | undefined {
  return state.bank.find((entry) => entry.attribute === attribute)?.strength;
}

/** The structured refinement message a strength slider emits. */
export function strengthMessage(attribute: string, strength: number): string {
  return `set ${attribute} strength to ${strength}`;
}
