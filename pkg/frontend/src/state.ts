/**
 * Playground state: one session, one in-flight request, pure derivations.
 *
 * The transcript is a projection of server state. Send is a strict state
 * machine: while a turn is pending no second request can be issued for the
 * session, so a 409 from the server is impossible by construction.
 */

import { ApiClient, ApiError } from "./api.js";
import { NpcWire, RosterWire, TurnWire } from "./schema.js";

/** Calls allowed per utterance, keyed by track. Mirrors the server budgets. */
export const TRACK_CALL_LIMITS: Record<string, string> = { api: "2", gpu: "∞" };

/** Default strategy chips per track; the api preset is D + RW + F. */
export function defaultPreset(track: string): string[] {
  return track === "api" ? ["D", "RW", "F"] : [];
}

export interface Bubble {
  speaker: "player" | "npc";
  text: string;
}

export interface TurnDetail {
  tool_calls: TurnWire["tool_calls"];
  tool_results: TurnWire["tool_results"];
  retrieval_hits: TurnWire["retrieval_hits"];
  budget: TurnWire["budget"];
  refined: boolean;
}

export interface SessionView {
  sessionId: string;
  npc: NpcWire;
  sceneName: string;
  sceneDisplay: string;
  track: string;
  strategies: string[];
  transcript: Bubble[];
  lastTurnDetail: TurnDetail | null;
}

export interface Banner {
  message: string;
  /** Player text to resend; set only for timeouts. */
  retryText: string | null;
}

export type Pending = "idle" | "creating" | "turn";

export type SendResult = "ok" | "busy" | "rejected" | "failed";

export interface StoreState {
  roster: RosterWire | null;
  rosterError: string | null;
  formError: string | null;
  view: SessionView | null;
  pending: Pending;
  banner: Banner | null;
  /** Raw payload of the most recent successful turn, as the server sent it. */
  lastServerTurn: TurnWire | null;
}

export class PlaygroundStore {
  state: StoreState = {
    roster: null,
    rosterError: null,
    formError: null,
    view: null,
    pending: "idle",
    banner: null,
    lastServerTurn: null,
  };

  private listeners: Array<() => void> = [];

  constructor(private api: ApiClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  async loadRoster(): Promise<void> {
    try {
      this.state.roster = await this.api.roster();
      this.state.rosterError = null;
    } catch (err) {
      this.state.rosterError = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  async startSession(req: {
    npcId: string;
    scene: string;
    track: string;
    strategies: string[];
  }): Promise<boolean> {
    if (this.state.pending !== "idle" || !this.state.roster) return false;
    this.state.pending = "creating";
    this.state.formError = null;
    this.emit();
    try {
      const created = await this.api.createSession({
        npc_id: req.npcId,
        scene: req.scene,
        track: req.track,
        strategies: req.strategies,
      });
      const npc = this.state.roster.npcs.find((n) => n.id === created.npc_id);
      const scene = this.state.roster.scenes[created.scene];
      if (!npc || !scene) throw new Error(`roster is missing ${created.npc_id} or ${created.scene}`);
      this.state.view = {
        sessionId: created.session_id,
        npc,
        sceneName: created.scene,
        sceneDisplay: scene.display,
        track: created.track,
        strategies: created.strategies,
        transcript: [],
        lastTurnDetail: null,
      };
      this.state.lastServerTurn = null;
      this.state.banner = null;
      return true;
    } catch (err) {
      this.state.formError =
        err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
      return false;
    } finally {
      this.state.pending = "idle";
      this.emit();
    }
  }

  async sendTurn(text: string): Promise<SendResult> {
    const view = this.state.view;
    if (!view || this.state.pending !== "idle") return "busy";
    if (!text.trim()) return "rejected";
    this.state.pending = "turn";
    this.state.banner = null;
    // the player bubble shows immediately; it is rolled back if the server
    // rejects the turn, keeping the transcript a projection of server state
    view.transcript.push({ speaker: "player", text });
    this.emit();
    try {
      const turn = await this.api.sendTurn(view.sessionId, text);
      view.transcript.push({ speaker: "npc", text: turn.npc_text });
      view.lastTurnDetail = {
        tool_calls: turn.tool_calls,
        tool_results: turn.tool_results,
        retrieval_hits: turn.retrieval_hits,
        budget: turn.budget,
        refined: turn.refined,
      };
      this.state.lastServerTurn = turn;
      return "ok";
    } catch (err) {
      view.transcript.pop();
      if (err instanceof ApiError && err.status === 504) {
        this.state.banner = { message: `Turn timed out: ${err.detail}`, retryText: text };
      } else {
        const message = err instanceof Error ? err.message : String(err);
        this.state.banner = { message, retryText: null };
      }
      return "failed";
    } finally {
      this.state.pending = "idle";
      this.emit();
    }
  }

  async retry(): Promise<SendResult> {
    const text = this.state.banner?.retryText;
    if (!text) return "rejected";
    this.state.banner = null;
    return this.sendTurn(text);
  }

  /** Rebuild the transcript from GET /v1/sessions/{id}; a reload equivalent. */
  async refresh(): Promise<void> {
    const view = this.state.view;
    if (!view) return;
    const snapshot = await this.api.getSession(view.sessionId);
    const ordered = [...snapshot.turns].sort((a, b) => a.timestamp - b.timestamp);
    view.transcript = ordered.map((turn) => ({ speaker: turn.speaker, text: turn.text }));
    this.emit();
  }

  budgetMeter(): string {
    const view = this.state.view;
    if (!view) return "";
    const limit = TRACK_CALL_LIMITS[view.track] ?? "?";
    const made = view.lastTurnDetail?.budget.calls_made ?? 0;
    return `${made}/${limit} calls`;
  }
}
