import { mountApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const backend = params.get("api") ?? "http://127.0.0.1:8080";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
mountApp(root, backend);
