/**
 * Boot: resolve the API base URL, then mount the app.
 *
 * Precedence: window.EVCHARGE_API_BASE (inline script), then an
 * optional ./config.json ({"api_base": "..."}), then the default
 * local registry port.
 */

import { ApiClient } from "./api.js";
import { initApp } from "./app.js";

const DEFAULT_API_BASE = "http://127.0.0.1:7432";

async function resolveApiBase(): Promise<string> {
  const inline = (window as { EVCHARGE_API_BASE?: string }).EVCHARGE_API_BASE;
  if (inline) {
    return inline;
  }
  try {
    const response = await fetch("./config.json");
    if (response.ok) {
      const config = (await response.json()) as { api_base?: string };
      if (config.api_base) {
        return config.api_base;
      }
    }
  } catch {
    // No config file; fall through to the default.
  }
  return DEFAULT_API_BASE;
}

void resolveApiBase().then((base) => {
  const root = document.getElementById("app");
  if (root) {
    initApp(root, new ApiClient(base));
  }
});
