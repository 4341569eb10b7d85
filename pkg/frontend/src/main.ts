import { ApiClient } from "./api.js";
import { PlaygroundStore } from "./state.js";
import { mount } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

// same-origin by default; the page is served by `npcforge serve --static-dir`
const store = new PlaygroundStore(new ApiClient(""));
mount(root, store);
void store.loadRoster();

// handy for poking at state from the console
(window as unknown as { playground: PlaygroundStore }).playground = store;
