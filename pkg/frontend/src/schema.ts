/**
 * Wire types for the /v1 HTTP API, with narrow runtime decoders.
 *
 * The page is served as plain ES modules with no bundler, so bare-specifier
 * schema libraries cannot load in the browser; decoding is hand-rolled.
 * Decoders throw DecodeError naming the offending field.
 */

export class DecodeError extends Error {}

function fail(path: string, expected: string): never {
  throw new DecodeError(`${path}: expected ${expected}`);
}

function obj(value: unknown, path: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    fail(path, "object");
  }
  return value as Record<string, unknown>;
}

function str(value: unknown, path: string): string {
  if (typeof value !== "string") fail(path, "string");
  return value;
}

function num(value: unknown, path: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) fail(path, "number");
  return value;
}

function arr(value: unknown, path: string): unknown[] {
  if (!Array.isArray(value)) fail(path, "array");
  return value;
}

function strArr(value: unknown, path: string): string[] {
  return arr(value, path).map((item, i) => str(item, `${path}[${i}]`));
}

export interface ToolCallWire {
  name: string;
  parameters: Record<string, unknown>;
}

export interface KnowledgeWire {
  id: string;
  kind: string;
  subject: string;
  body: string;
}

export interface ToolResultWire {
  call: ToolCallWire;
  status: string;
  // the wire omits these keys when empty; decoded values mirror that
  knowledge?: KnowledgeWire;
  message?: string;
}

export interface HitWire {
  record_id: string;
  similarity: number;
}

export interface BudgetWire {
  calls_made: number;
  tokens_in: number;
  tokens_out: number;
}

export interface TurnWire {
  session_id: string;
  npc_text: string;
  tool_calls: ToolCallWire[];
  tool_results: ToolResultWire[];
  retrieval_hits: Record<string, HitWire[]>;
  budget: BudgetWire;
  refined: boolean;
  turn_count: number;
}

export interface NpcWire {
  id: string;
  role: string;
  role_display: string;
  persona_text: string;
}

export interface SceneWire {
  display: string;
  location: string;
}

export interface RosterWire {
  npcs: NpcWire[];
  scenes: Record<string, SceneWire>;
  strategies: string[];
  tracks: string[];
  default_strategies: Record<string, string[]>;
  default_track: string;
}

export interface SessionCreatedWire {
  session_id: string;
  npc_id: string;
  scene: string;
  track: string;
  strategies: string[];
}

export interface TranscriptTurnWire {
  speaker: "player" | "npc";
  text: string;
  timestamp: number;
}

export interface SessionSnapshotWire {
  id: string;
  turns: TranscriptTurnWire[];
  strategy_set: string[];
  budget_profile: string;
}

export interface ErrorWire {
  error: string;
  detail: string;
}

export function decodeToolCall(value: unknown, path = "tool_call"): ToolCallWire {
  const body = obj(value, path);
  return {
    name: str(body.name, `${path}.name`),
    parameters: obj(body.parameters ?? {}, `${path}.parameters`),
  };
}

function decodeToolResult(value: unknown, path: string): ToolResultWire {
  const body = obj(value, path);
  const result: ToolResultWire = {
    call: decodeToolCall(body.call, `${path}.call`),
    status: str(body.status, `${path}.status`),
  };
  if (body.knowledge != null) {
    const entry = obj(body.knowledge, `${path}.knowledge`);
    result.knowledge = {
      id: str(entry.id, `${path}.knowledge.id`),
      kind: str(entry.kind, `${path}.knowledge.kind`),
      subject: str(entry.subject, `${path}.knowledge.subject`),
      body: str(entry.body, `${path}.knowledge.body`),
    };
  }
  if (body.message != null) {
    result.message = str(body.message, `${path}.message`);
  }
  return result;
}

export function decodeTurn(value: unknown): TurnWire {
  const body = obj(value, "turn");
  const budget = obj(body.budget, "turn.budget");
  const hits: Record<string, HitWire[]> = {};
  for (const [stage, list] of Object.entries(obj(body.retrieval_hits ?? {}, "turn.retrieval_hits"))) {
    hits[stage] = arr(list, `turn.retrieval_hits.${stage}`).map((hit, i) => {
      const entry = obj(hit, `turn.retrieval_hits.${stage}[${i}]`);
      return {
        record_id: str(entry.record_id, `turn.retrieval_hits.${stage}[${i}].record_id`),
        similarity: num(entry.similarity, `turn.retrieval_hits.${stage}[${i}].similarity`),
      };
    });
  }
  return {
    session_id: str(body.session_id, "turn.session_id"),
    npc_text: str(body.npc_text, "turn.npc_text"),
    tool_calls: arr(body.tool_calls, "turn.tool_calls").map((c, i) => decodeToolCall(c, `turn.tool_calls[${i}]`)),
    tool_results: arr(body.tool_results, "turn.tool_results").map((r, i) =>
      decodeToolResult(r, `turn.tool_results[${i}]`),
    ),
    retrieval_hits: hits,
    budget: {
      calls_made: num(budget.calls_made, "turn.budget.calls_made"),
      tokens_in: num(budget.tokens_in, "turn.budget.tokens_in"),
      tokens_out: num(budget.tokens_out, "turn.budget.tokens_out"),
    },
    refined: body.refined === true,
    turn_count: num(body.turn_count, "turn.turn_count"),
  };
}

export function decodeRoster(value: unknown): RosterWire {
  const body = obj(value, "roster");
  const scenes: Record<string, SceneWire> = {};
  for (const [name, raw] of Object.entries(obj(body.scenes, "roster.scenes"))) {
    const scene = obj(raw, `roster.scenes.${name}`);
    scenes[name] = {
      display: str(scene.display, `roster.scenes.${name}.display`),
      location: str(scene.location, `roster.scenes.${name}.location`),
    };
  }
  const defaults: Record<string, string[]> = {};
  for (const [track, list] of Object.entries(obj(body.default_strategies, "roster.default_strategies"))) {
    defaults[track] = strArr(list, `roster.default_strategies.${track}`);
  }
  return {
    npcs: arr(body.npcs, "roster.npcs").map((raw, i) => {
      const npc = obj(raw, `roster.npcs[${i}]`);
      return {
        id: str(npc.id, `roster.npcs[${i}].id`),
        role: str(npc.role, `roster.npcs[${i}].role`),
        role_display: str(npc.role_display, `roster.npcs[${i}].role_display`),
        persona_text: str(npc.persona_text, `roster.npcs[${i}].persona_text`),
      };
    }),
    scenes,
    strategies: strArr(body.strategies, "roster.strategies"),
    tracks: strArr(body.tracks, "roster.tracks"),
    default_strategies: defaults,
    default_track: str(body.default_track, "roster.default_track"),
  };
}

export function decodeSessionCreated(value: unknown): SessionCreatedWire {
  const body = obj(value, "session");
  return {
    session_id: str(body.session_id, "session.session_id"),
    npc_id: str(body.npc_id, "session.npc_id"),
    scene: str(body.scene, "session.scene"),
    track: str(body.track, "session.track"),
    strategies: strArr(body.strategies, "session.strategies"),
  };
}

export function decodeSessionSnapshot(value: unknown): SessionSnapshotWire {
  const body = obj(value, "session");
  const turns = arr(body.turns, "session.turns").map((raw, i) => {
    const turn = obj(raw, `session.turns[${i}]`);
    const speaker = str(turn.speaker, `session.turns[${i}].speaker`);
    if (speaker !== "player" && speaker !== "npc") {
      fail(`session.turns[${i}].speaker`, '"player" or "npc"');
    }
    return {
      speaker: speaker as "player" | "npc",
      text: str(turn.text, `session.turns[${i}].text`),
      timestamp: num(turn.timestamp, `session.turns[${i}].timestamp`),
    };
  });
  return {
    id: str(body.id, "session.id"),
    turns,
    strategy_set: strArr(body.strategy_set, "session.strategy_set"),
    budget_profile: str(body.budget_profile, "session.budget_profile"),
  };
}

export function decodeErrorEnvelope(value: unknown): ErrorWire | null {
  if (typeof value !== "object" || value === null) return null;
  const body = value as Record<string, unknown>;
  if (typeof body.error !== "string") return null;
  return { error: body.error, detail: typeof body.detail === "string" ? body.detail : "" };
}
