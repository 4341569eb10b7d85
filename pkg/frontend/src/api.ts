/**
 * Thin client for the /v1 HTTP API. One base-URL setting; every payload
 * passes through a decoder before reaching the rest of the app.
 */

import {
  RosterWire,
  SessionCreatedWire,
  SessionSnapshotWire,
  TurnWire,
  decodeErrorEnvelope,
  decodeRoster,
  decodeSessionCreated,
  decodeSessionSnapshot,
  decodeTurn,
} from "./schema.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${status} ${code}: ${detail}`);
  }
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export interface CreateSessionRequest {
  npc_id: string;
  scene: string;
  track?: string;
  strategies?: string[];
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    // fetch must stay window-bound in browsers, hence the lambda default
    private fetchFn: FetchFn = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const envelope = decodeErrorEnvelope(payload);
      throw new ApiError(
        response.status,
        envelope?.error ?? "http_error",
        envelope?.detail ?? `request to ${path} failed`,
      );
    }
    return payload;
  }

  async health(): Promise<boolean> {
    const payload = (await this.request("GET", "/v1/health")) as { status?: string };
    return payload?.status === "ok";
  }

  async roster(): Promise<RosterWire> {
    return decodeRoster(await this.request("GET", "/v1/npcs"));
  }

  async createSession(body: CreateSessionRequest): Promise<SessionCreatedWire> {
    return decodeSessionCreated(await this.request("POST", "/v1/sessions", body));
  }

  async sendTurn(sessionId: string, playerText: string): Promise<TurnWire> {
    return decodeTurn(
      await this.request("POST", `/v1/sessions/${sessionId}/turns`, { player_text: playerText }),
    );
  }

  async getSession(sessionId: string): Promise<SessionSnapshotWire> {
    return decodeSessionSnapshot(await this.request("GET", `/v1/sessions/${sessionId}`));
  }
}
