import { makeClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const app = new App(root, makeClient((url, init) => fetch(url, init)));
window.addEventListener("keydown", (e) => {
  void app.handleKey(e);
});
void app.load();
