import { ReviewApi } from "./api.js";
import { ConsoleStore } from "./state.js";
import { App } from "./ui.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");

const store = new ConsoleStore(new ReviewApi(""));
new App(root, store).mount();
void store.loadRuns();
