/**
 * DOM controller: chat panel, live face preview, memory panel with
 * per-attribute strength sliders, and undo.
 *
 * One mutation in flight at a time (input disabled while pending); every
 * piece of displayed state comes from the most recent server response.
 */

import { ApiError, CharEditApi } from "./api.js";
import { placeholderFace, renderFaceSVG } from "./face.js";
import {
  applyServerState,
  bankStrength,
  beginTurn,
  type ClientSessionState,
  failTurn,
  initialState,
  strengthMessage,
} from "./state.js";

export interface AppElements {
  transcript: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  undo: HTMLButtonElement;
  preview: HTMLElement;
  memory: HTMLElement;
  status: HTMLElement;
}

export class App {
  state: ClientSessionState = initialState();
  private renderedVersion = -1;

  constructor(
    private readonly api: CharEditApi,
    private readonly el: AppElements,
  ) {
    el.send.addEventListener("click", () => void this.sendFromInput());
    el.input.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") void this.sendFromInput();
    });
    el.undo.addEventListener("click", () => void this.undo());
    this.render();
  }

  async start(seed: number, initialText?: string): Promise<void> {
    this.setState({ ...this.state, pending: true });
    try {
      const server = await this.api.createSession(seed, initialText);
      this.setState(applyServerState(this.state, server));
    } catch (err) {
      this.setState(failTurn(this.state, describe(err)));
    }
  }

  async sendFromInput(): Promise<void> {
    const text = this.el.input.value.trim();
    if (!text) return;
    this.el.input.value = "";
    await this.sendMessage(text);
  }

  async sendMessage(text: string): Promise<void> {
    if (this.state.pending || !this.state.sessionId) return;
    this.setState(beginTurn(this.state, text));
    try {
      const server = await this.api.sendMessage(this.state.sessionId, text);
      this.setState(applyServerState(this.state, server));
    } catch (err) {
      this.setState(failTurn(this.state, describe(err)));
    }
  }

  /** Slider commit: a structured refinement turn through the same endpoint. */
  async adjustStrength(attribute: string, strength: number): Promise<void> {
    if (strength === bankStrength(this.state, attribute)) return; // no-op turn suppressed
    await this.sendMessage(strengthMessage(attribute, strength));
  }

  async undo(): Promise<void> {
    if (this.state.pending || !this.state.sessionId) return;
    this.setState({ ...this.state, pending: true });
    try {
      const server = await this.api.undo(this.state.sessionId);
      this.setState(applyServerState(this.state, server));
    } catch (err) {
      this.setState(failTurn(this.state, describe(err)));
    }
  }

  private setState(next: ClientSessionState): void {
    this.state = next;
    this.render();
  }

  private render(): void {
    const { el, state } = this;
    el.input.disabled = state.pending || !state.sessionId;
    el.send.disabled = state.pending || !state.sessionId;
    el.undo.disabled = state.pending || !state.sessionId;
    el.status.textContent = state.pending
      ? "working…"
      : state.sessionId
        ? `session ${state.sessionId} · v${state.parametersVersion}`
        : "no session";

    el.transcript.replaceChildren(
      ...state.transcript.map((entry) => {
        const item = document.createElement("div");
        item.className = `turn turn-${entry.speaker}` + (entry.failed ? " turn-failed" : "");
        item.textContent = entry.text;
        return item;
      }),
    );
    el.transcript.scrollTop = el.transcript.scrollHeight;

    // redraw only when the acknowledged parameters version moves
    if (state.parametersVersion !== this.renderedVersion) {
      el.preview.innerHTML = state.preview
        ? renderFaceSVG(state.preview)
        : placeholderFace("no preview yet");
      this.renderedVersion = state.parametersVersion;
    }

    el.memory.replaceChildren(
      ...state.bank.map((entry) => {
        const row = document.createElement("div");
        row.className = "memory-row";
        const label = document.createElement("span");
        label.textContent = `${entry.attribute} — "${entry.prompt}"`;
        const value = document.createElement("span");
        value.className = "memory-strength";
        value.textContent = entry.strength.toFixed(2);
        const slider = document.createElement("input");
        slider.type = "range";
        slider.min = "0";
        slider.max = "1";
        slider.step = "0.05";
        slider.value = String(entry.strength);
        slider.disabled = state.pending;
        slider.dataset.attribute = entry.attribute;
        slider.addEventListener("change", () => {
          void this.adjustStrength(entry.attribute, Number(slider.value));
        });
        row.append(label, slider, value);
        return row;
      }),
    );
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.body.code}: ${err.body.message}`;
  return err instanceof Error ? err.message : String(err);
}
