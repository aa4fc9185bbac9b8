// @vitest-environment jsdom
//
// Live end-to-end test: spawns the real HTTP service, drives the actual DOM
// app against it (scripted message, strength slider, undo), and checks that
// client state equals server state field by field and that the preview
// snapshot changes exactly when the parameters version changes.
import { type ChildProcess, spawn } from "node:child_process";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { CharEditApi } from "../src/api.js";
import { App, type AppElements } from "../src/app.js";

const PORT = 8907;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;

async function waitForHealth(timeoutMs = 90_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/healthz`);
      if (response.ok) return;
    } catch (err) {
      lastError = err;
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
  throw new Error(`service did not come up: ${lastError}`);
}

function mountDom(): AppElements {
  document.body.innerHTML = `
    <div id="transcript"></div>
    <input id="chat-input" type="text">
    <button id="chat-send"></button>
    <button id="undo"></button>
    <div id="preview"></div>
    <div id="memory"></div>
    <span id="status"></span>
  `;
  return {
    transcript: document.getElementById("transcript")!,
    input: document.getElementById("chat-input") as HTMLInputElement,
    send: document.getElementById("chat-send") as HTMLButtonElement,
    undo: document.getElementById("undo") as HTMLButtonElement,
    preview: document.getElementById("preview")!,
    memory: document.getElementById("memory")!,
    status: document.getElementById("status")!,
  };
}

async function expectClientMatchesServer(app: App, api: CharEditApi): Promise<void> {
  const sid = app.state.sessionId!;
  const parameters = await api.getParameters(sid);
  const memory = await api.getMemory(sid);
  expect(app.state.parametersVersion).toBe(parameters.parameters_version);
  expect(app.state.preview).toEqual(parameters.preview);
  expect(app.state.bank).toEqual(memory.attributes);
}

beforeAll(async () => {
  server = spawn("charedit", ["serve"], {
    env: { ...process.env, CHAREDIT_PORT: String(PORT), CHAREDIT_HOST: "127.0.0.1" },
    stdio: "ignore",
  });
  await waitForHealth();
});

afterAll(() => {
  server?.kill();
});

describe("scripted session against the live service", () => {
  it("message, slider, undo keep client and server state equal", async () => {
    const api = new CharEditApi(BASE);
    const app = new App(api, mountDom());

    await app.start(11);
    expect(app.state.sessionId).not.toBeNull();
    await expectClientMatchesServer(app, api);
    const snapshots: { version: number; svg: string }[] = [];
    const record = () =>
      snapshots.push({
        version: app.state.parametersVersion,
        svg: document.getElementById("preview")!.innerHTML,
      });
    record();

    // 1. chat-only turn: no version change, preview snapshot untouched
    await app.sendMessage("hello there");
    await expectClientMatchesServer(app, api);
    record();
    expect(snapshots[1].version).toBe(snapshots[0].version);
    expect(snapshots[1].svg).toBe(snapshots[0].svg);

    // 2. an edit turn: version moves, preview changes
    await app.sendMessage("make the nose slightly bigger");
    await expectClientMatchesServer(app, api);
    record();
    expect(snapshots[2].version).toBeGreaterThan(snapshots[1].version);
    expect(snapshots[2].svg).not.toBe(snapshots[1].svg);
    expect(app.state.bank.find((b) => b.attribute === "nose")?.strength).toBe(0.25);

    // 3. strength slider: structured refinement through the same endpoint
    await app.adjustStrength("nose", 0.6);
    await expectClientMatchesServer(app, api);
    record();
    expect(app.state.bank.find((b) => b.attribute === "nose")?.strength).toBe(0.6);
    expect(snapshots[3].version).toBeGreaterThan(snapshots[2].version);
    expect(snapshots[3].svg).not.toBe(snapshots[2].svg);

    // slider to the stored value: suppressed client-side, nothing changes
    const versionBefore = app.state.parametersVersion;
    await app.adjustStrength("nose", 0.6);
    await expectClientMatchesServer(app, api);
    expect(app.state.parametersVersion).toBe(versionBefore);

    // 4. undo: preview reverts to the pre-slider snapshot
    await app.undo();
    await expectClientMatchesServer(app, api);
    record();
    expect(snapshots[4].svg).toBe(snapshots[2].svg);
    expect(app.state.bank.find((b) => b.attribute === "nose")?.strength).toBe(0.25);

    // transcript holds the whole scripted conversation in order
    const speakers = app.state.transcript.map((t) => t.speaker);
    expect(speakers.filter((s) => s === "user")).toHaveLength(3);
  }, 120_000);

  it("failed transport marks the turn without corrupting state", async () => {
    const api = new CharEditApi(BASE);
    const app = new App(api, mountDom());
    await app.start(12);
    const good = app.state.parametersVersion;
    // point the api at a dead port mid-session
    const dead = new CharEditApi("http://127.0.0.1:1");
    const broken = new App(dead, mountDom());
    broken.state = { ...app.state };
    await broken.sendMessage("make the jaw wider");
    expect(broken.state.parametersVersion).toBe(good);
    expect(broken.state.transcript.at(-1)?.failed).toBe(true);
  }, 120_000);
});
