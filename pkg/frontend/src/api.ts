// Thin fetch client for the /v1 API. Session mutations return NDJSON event
// lines which are kept verbatim so the log can be mirrored byte-for-byte.

import type { DatasetInfo, QueryParts, RunRecord, SessionStateView } from "./types.js";

export interface ApiConfig {
  baseUrl: string;
  token?: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly detail: unknown;

  constructor(status: number, code: string, message: string, detail?: unknown) {
    super(message);
    this.status = status;
    this.code = code;
    this.detail = detail;
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let code = `http_${response.status}`;
  let message = response.statusText;
  let detail: unknown;
  try {
    const body = await response.json();
    code = body.code ?? code;
    message = body.message ?? message;
    detail = body.detail;
  } catch {
    // non-JSON error body; keep the HTTP status text
  }
  throw new ApiError(response.status, code, message, detail);
}

export function splitNdjson(text: string): string[] {
  return text.split("\n").filter((line) => line.length > 0);
}

export class ApiClient {
  constructor(private readonly config: ApiConfig) {}

  private headers(json = true): HeadersInit {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.config.token) headers["Authorization"] = `Bearer ${this.config.token}`;
    return headers;
  }

  private url(path: string): string {
    return `${this.config.baseUrl}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.url(path), { headers: this.headers(false) });
    await raiseForStatus(response);
    return response.json() as Promise<T>;
  }

  private async postForLines(path: string, body: unknown): Promise<string[]> {
    const response = await fetch(this.url(path), {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(body),
    });
    await raiseForStatus(response);
    return splitNdjson(await response.text());
  }

  imageUrl(imageId: string): string {
    return this.url(`/v1/images/${encodeURIComponent(imageId)}`);
  }

  async listDatasets(): Promise<DatasetInfo[]> {
    const body = await this.getJson<{ datasets: DatasetInfo[] }>("/v1/datasets");
    return body.datasets;
  }

  async createEvalRun(config: Record<string, unknown>): Promise<RunRecord> {
    const response = await fetch(this.url("/v1/eval/runs"), {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(config),
    });
    await raiseForStatus(response);
    return response.json() as Promise<RunRecord>;
  }

  async listEvalRuns(): Promise<RunRecord[]> {
    const body = await this.getJson<{ runs: RunRecord[] }>("/v1/eval/runs");
    return body.runs;
  }

  async getEvalRun(runId: string): Promise<RunRecord> {
    return this.getJson<RunRecord>(`/v1/eval/runs/${encodeURIComponent(runId)}`);
  }

  async openSession(scope: Record<string, unknown>, k = 10): Promise<string[]> {
    return this.postForLines("/v1/sessions", { scope, k });
  }

  async submitQuery(sessionId: string, parts: QueryParts, k?: number): Promise<string[]> {
    return this.postForLines(`/v1/sessions/${encodeURIComponent(sessionId)}/query`, { ...parts, k });
  }

  async select(sessionId: string, imageId: string, extraText?: string): Promise<string[]> {
    return this.postForLines(`/v1/sessions/${encodeURIComponent(sessionId)}/select`, {
      image_id: imageId,
      extra_text: extraText,
    });
  }

  async closeSession(sessionId: string): Promise<string[]> {
    return this.postForLines(`/v1/sessions/${encodeURIComponent(sessionId)}/close`, {});
  }

  async sessionLogText(sessionId: string): Promise<string> {
    const response = await fetch(this.url(`/v1/sessions/${encodeURIComponent(sessionId)}/log`), {
      headers: this.headers(false),
    });
    await raiseForStatus(response);
    return response.text();
  }

  async sessionState(sessionId: string): Promise<SessionStateView> {
    return this.getJson<SessionStateView>(`/v1/sessions/${encodeURIComponent(sessionId)}`);
  }
}
