import { spawn, type ChildProcess } from "node:child_process";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchFn } from "../src/api.js";

const HERE = dirname(fileURLToPath(import.meta.url));
export const FIXTURE_SCRIPT = join(HERE, "fixtures", "playground_script.json");

export interface LiveServer {
  base: string;
  stop: () => void;
}

/** Start `npcforge serve` with a scripted mock backend and wait until healthy. */
export async function startServer(port: number): Promise<LiveServer> {
  const child: ChildProcess = spawn(
    "npcforge",
    ["serve", "--backend", "mock", "--mock-script", FIXTURE_SCRIPT, "--port", String(port)],
    { stdio: "ignore" },
  );
  const base = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const res = await fetch(`${base}/v1/health`);
      if (res.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill("SIGTERM");
      throw new Error("server did not become healthy in time");
    }
    await sleep(150);
  }
  return { base, stop: () => child.kill("SIGTERM") };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Poll until the condition holds; fails loudly instead of hanging. */
export async function until(condition: () => boolean, timeoutMs = 15_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!condition()) {
    if (Date.now() > deadline) throw new Error("condition not met in time");
    await sleep(10);
  }
}

export interface TurnTraffic {
  turnRequests: number;
  maxInFlight: number;
  responses: unknown[];
}

/**
 * fetch wrapper that counts concurrent turn POSTs and captures their JSON
 * bodies, so tests can prove the client never overlaps requests and can
 * compare rendered state against exactly what the server sent.
 */
export function trackingFetch(): { fetchFn: FetchFn; traffic: TurnTraffic } {
  const traffic: TurnTraffic = { turnRequests: 0, maxInFlight: 0, responses: [] };
  let inFlight = 0;
  const fetchFn: FetchFn = async (input, init) => {
    const isTurn = input.includes("/turns") && init?.method === "POST";
    if (isTurn) {
      traffic.turnRequests += 1;
      inFlight += 1;
      traffic.maxInFlight = Math.max(traffic.maxInFlight, inFlight);
    }
    try {
      const response = await fetch(input, init);
      if (isTurn && response.ok) traffic.responses.push(await response.clone().json());
      return response;
    } finally {
      if (isTurn) inFlight -= 1;
    }
  };
  return { fetchFn, traffic };
}
