import { CharEditApi } from "./api.js";
import { App, type AppElements } from "./app.js";

function grab<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

window.addEventListener("DOMContentLoaded", () => {
  const elements: AppElements = {
    transcript: grab("transcript"),
    input: grab<HTMLInputElement>("chat-input"),
    send: grab<HTMLButtonElement>("chat-send"),
    undo: grab<HTMLButtonElement>("undo"),
    preview: grab("preview"),
    memory: grab("memory"),
    status: grab("status"),
  };
  const app = new App(new CharEditApi(""), elements);
  void app.start(Math.floor(Math.random() * 1_000_000));
  (window as unknown as { chareditApp: App }).chareditApp = app;
});
