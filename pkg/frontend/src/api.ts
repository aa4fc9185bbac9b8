/**
 * Typed client for the charedit session API.
 *
 * Every mutation response carries the fresh state (parameters version,
 * preview, memory), so the client never polls.
 */

export interface PreviewData {
  landmarks: [number, number][];
  landmark_names: string[];
  appearance: number[];
}

export interface ParametersPayload {
  values: number[];
  schema_hash: string;
  parameters_version: number;
  preview: PreviewData;
}

export interface MemoryAttribute {
  attribute: string;
  prompt: string;
  strength: number;
  last_round: number;
}

export interface MemoryPayload {
  round_counter: number;
  attributes: MemoryAttribute[];
}

export interface SessionState {
  session_id: string;
  rounds: number;
  parameters_version: number;
  parameters: ParametersPayload;
  memory: MemoryPayload;
  feedback?: string;
  failed?: boolean;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

async function request<T>(base: string, method: string, path: string, body?: unknown): Promise<T> {
  const response = await fetch(base + path, {
    method,
    headers: { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const payload = await response.json();
  if (!response.ok) {
    throw new ApiError(response.status, payload as ApiErrorBody);
  }
  return payload as T;
}

export class CharEditApi {
  constructor(private readonly base: string = "") {}

  healthz(): Promise<{ status: string; versions: Record<string, string> }> {
    return request(this.base, "GET", "/healthz");
  }

  createSession(seed: number, initialText?: string): Promise<SessionState> {
    return request(this.base, "POST", "/sessions", {
      seed,
      initial_text: initialText ?? null,
    });
  }

  sendMessage(sessionId: string, text: string): Promise<SessionState> {
    return request(this.base, "POST", `/sessions/${sessionId}/message`, { text });
  }

  undo(sessionId: string): Promise<SessionState> {
    return request(this.base, "POST", `/sessions/${sessionId}/undo`);
  }

  getParameters(sessionId: string): Promise<ParametersPayload> {
    return request(this.base, "GET", `/sessions/${sessionId}/parameters`);
  }

  getMemory(sessionId: string): Promise<MemoryPayload> {
    return request(this.base, "GET", `/sessions/${sessionId}/memory`);
  }
}
