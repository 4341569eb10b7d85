/**
 * DOM layer. mount() builds the static skeleton once and re-renders the
 * dynamic regions on every store change; form controls persist so typing
 * and selection survive renders.
 */

import { PlaygroundStore, defaultPreset } from "./state.js";

const SKELETON = `
  <section id="setup">
    <h1>npcforge playground</h1>
    <div id="roster-error" class="error" hidden></div>
    <form id="setup-form">
      <label>NPC <select id="npc-select"></select></label>
      <label>Scene <select id="scene-select"></select></label>
      <label>Track <select id="track-select"></select></label>
      <div id="strategy-chips" aria-label="strategies"></div>
      <button id="start-button" type="submit">Start session</button>
      <div id="form-error" class="error" hidden></div>
    </form>
  </section>
  <section id="chat" hidden>
    <header>
      <div id="session-header"></div>
      <div id="session-chips"></div>
      <div id="budget-meter"></div>
    </header>
    <div id="timeout-banner" class="banner" hidden>
      <span id="banner-text"></span>
      <button id="retry-button" type="button" hidden>Retry</button>
    </div>
    <div id="transcript" aria-live="polite"></div>
    <details id="drawer">
      <summary>Turn detail</summary>
      <div id="drawer-body"></div>
    </details>
    <form id="send-form">
      <input id="player-input" type="text" autocomplete="off"
             placeholder="Say something to the NPC" />
      <button id="send-button" type="submit" disabled>Send</button>
    </form>
  </section>
`;

function el<T extends HTMLElement>(root: ParentNode, selector: string): T {
  const found = root.querySelector(selector);
  if (!found) throw new Error(`missing element ${selector}`);
  return found as T;
}

function option(value: string, label: string): HTMLOptionElement {
  const opt = document.createElement("option");
  opt.value = value;
  opt.textContent = label;
  return opt;
}

export interface Mounted {
  store: PlaygroundStore;
  root: HTMLElement;
  selectedStrategies: () => string[];
}

export function mount(root: HTMLElement, store: PlaygroundStore): Mounted {
  root.innerHTML = SKELETON;

  const npcSelect = el<HTMLSelectElement>(root, "#npc-select");
  const sceneSelect = el<HTMLSelectElement>(root, "#scene-select");
  const trackSelect = el<HTMLSelectElement>(root, "#track-select");
  const chipBox = el<HTMLDivElement>(root, "#strategy-chips");
  const input = el<HTMLInputElement>(root, "#player-input");
  const sendButton = el<HTMLButtonElement>(root, "#send-button");

  // form-side chip selection; reset to the track preset on track change
  const selected = new Set<string>(defaultPreset(trackSelect.value));
  let rosterRendered = false;

  function renderChips(): void {
    const roster = store.state.roster;
    chipBox.textContent = "";
    if (!roster) return;
    for (const strategy of roster.strategies) {
      if (strategy === "ZeroShot") continue; // the baseline is the empty selection
      const chip = document.createElement("button");
      chip.type = "button";
      chip.className = "chip" + (selected.has(strategy) ? " selected" : "");
      chip.dataset.strategy = strategy;
      chip.textContent = strategy;
      chip.addEventListener("click", () => {
        if (selected.has(strategy)) selected.delete(strategy);
        else selected.add(strategy);
        renderChips();
      });
      chipBox.append(chip);
    }
  }

  function renderForm(): void {
    const roster = store.state.roster;
    const rosterError = el<HTMLDivElement>(root, "#roster-error");
    rosterError.hidden = !store.state.rosterError;
    rosterError.textContent = store.state.rosterError ?? "";
    if (!roster || rosterRendered) return;
    rosterRendered = true;
    for (const npc of roster.npcs) npcSelect.append(option(npc.id, `${npc.id} (${npc.role_display})`));
    for (const [name, scene] of Object.entries(roster.scenes)) {
      sceneSelect.append(option(name, scene.display));
    }
    for (const track of roster.tracks) trackSelect.append(option(track, track));
    trackSelect.value = roster.default_track;
    selected.clear();
    for (const strategy of defaultPreset(roster.default_track)) selected.add(strategy);
    renderChips();
  }

  function renderSession(): void {
    const view = store.state.view;
    const chat = el<HTMLElement>(root, "#chat");
    const formError = el<HTMLDivElement>(root, "#form-error");
    formError.hidden = !store.state.formError;
    formError.textContent = store.state.formError ?? "";
    chat.hidden = !view;
    if (!view) return;

    el<HTMLDivElement>(root, "#session-header").textContent =
      `${view.npc.id} · ${view.npc.role_display} · ${view.sceneDisplay}`;

    const sessionChips = el<HTMLDivElement>(root, "#session-chips");
    sessionChips.textContent = "";
    for (const strategy of view.strategies) {
      const chip = document.createElement("span");
      chip.className = "chip selected";
      chip.dataset.strategy = strategy;
      chip.textContent = strategy;
      sessionChips.append(chip);
    }

    el<HTMLDivElement>(root, "#budget-meter").textContent = store.budgetMeter();

    const transcript = el<HTMLDivElement>(root, "#transcript");
    transcript.textContent = "";
    for (const bubble of view.transcript) {
      const node = document.createElement("div");
      node.className = `bubble ${bubble.speaker}`;
      node.textContent = bubble.text;
      transcript.append(node);
    }

    renderDrawer();
    renderBanner();
  }

  function renderDrawer(): void {
    const body = el<HTMLDivElement>(root, "#drawer-body");
    body.textContent = "";
    const detail = store.state.view?.lastTurnDetail;
    if (!detail) {
      body.textContent = "No turns yet.";
      return;
    }
    const calls = document.createElement("ul");
    calls.id = "drawer-calls";
    for (const call of detail.tool_calls) {
      const item = document.createElement("li");
      item.textContent = `${call.name}(${JSON.stringify(call.parameters)})`;
      calls.append(item);
    }
    if (!detail.tool_calls.length) {
      const item = document.createElement("li");
      item.textContent = "(no tool calls)";
      calls.append(item);
    }
    body.append(heading("Tool calls"), calls);

    const results = document.createElement("ul");
    results.id = "drawer-results";
    for (const result of detail.tool_results) {
      const item = document.createElement("li");
      item.textContent = result.knowledge
        ? `${result.call.name}: ${result.knowledge.subject}: ${result.knowledge.body}`
        : `${result.call.name}: ${result.status}${result.message ? ` (${result.message})` : ""}`;
      results.append(item);
    }
    if (detail.tool_results.length) body.append(heading("Results"), results);

    const stages = Object.entries(detail.retrieval_hits).filter(([, hits]) => hits.length);
    if (stages.length) {
      const hits = document.createElement("ul");
      hits.id = "drawer-hits";
      for (const [stage, list] of stages) {
        for (const hit of list) {
          const item = document.createElement("li");
          item.textContent = `${stage}: ${hit.record_id} (sim ${hit.similarity.toFixed(2)})`;
          hits.append(item);
        }
      }
      body.append(heading("Retrieved memories"), hits);
    }
  }

  function heading(text: string): HTMLElement {
    const node = document.createElement("h3");
    node.textContent = text;
    return node;
  }

  function renderBanner(): void {
    const banner = el<HTMLDivElement>(root, "#timeout-banner");
    const retry = el<HTMLButtonElement>(root, "#retry-button");
    const state = store.state.banner;
    banner.hidden = !state;
    el<HTMLSpanElement>(root, "#banner-text").textContent = state?.message ?? "";
    retry.hidden = !state?.retryText;
  }

  function updateSendDisabled(): void {
    sendButton.disabled =
      !store.state.view || store.state.pending !== "idle" || !input.value.trim();
  }

  el<HTMLFormElement>(root, "#setup-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void store.startSession({
      npcId: npcSelect.value,
      scene: sceneSelect.value,
      track: trackSelect.value,
      strategies: [...selected],
    });
  });

  trackSelect.addEventListener("change", () => {
    selected.clear();
    for (const strategy of defaultPreset(trackSelect.value)) selected.add(strategy);
    renderChips();
  });

  el<HTMLFormElement>(root, "#send-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    void store.sendTurn(text).then((result) => {
      if (result === "ok") {
        input.value = "";
        updateSendDisabled();
      }
    });
    updateSendDisabled();
  });

  input.addEventListener("input", updateSendDisabled);
  el<HTMLButtonElement>(root, "#retry-button").addEventListener("click", () => {
    void store.retry();
  });

  store.onChange(() => {
    renderForm();
    renderSession();
    updateSendDisabled();
  });

  return { store, root, selectedStrategies: () => [...selected] };
}
