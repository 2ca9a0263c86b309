/** Thin fetch client for the monitoring service. */

import type { Observation, SessionView, StageSnapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail = typeof body?.detail === "string" ? body.detail : JSON.stringify(body?.detail ?? body);
    throw new ApiError(resp.status, detail);
  }
  return body as T;
}

export class MonitorClient {
  constructor(public base: string) {}

  createSession(design: Record<string, unknown>, idempotencyKey?: string): Promise<{ session_id: string }> {
    const body: Record<string, unknown> = { design };
    if (idempotencyKey) body["idempotency_key"] = idempotencyKey;
    return request(this.base, "/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(sid: string): Promise<SessionView> {
    return request(this.base, `/sessions/${sid}`);
  }

  submitStage(sid: string, observations: Observation[]): Promise<StageSnapshot> {
    return request(this.base, `/sessions/${sid}/stages`, {
      method: "POST",
      body: JSON.stringify({ observations }),
    });
  }

  applyDecisions(sid: string, stop: string[]): Promise<SessionView> {
    return request(this.base, `/sessions/${sid}/decisions`, {
      method: "POST",
      body: JSON.stringify({ stop }),
    });
  }

  getBounds(
    sid: string,
    stage: number,
    kind: "compatible" | "informative",
    lam: "r" | "s" | "c",
  ): Promise<Record<string, unknown>> {
    const qs = new URLSearchParams({ stage: String(stage), kind, lambda: lam });
    return request(this.base, `/sessions/${sid}/bounds?${qs}`);
  }
}
