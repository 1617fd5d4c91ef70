// End-to-end round-trip against a live service instance (the console's
// acceptance check). Run with: npm run test:integration

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ConsoleSession } from "../src/store.js";
import { Timeline } from "../src/timeline.js";

const PORT = 8931 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

async function waitForService(timeoutMs = 45_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/v1/datasets`);
      if (response.ok) return;
    } catch {
      // not listening yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("service did not become ready");
}

describe.skipIf(!process.env.INTEGRATION)("console round-trip against the live service", () => {
  let service: ChildProcess;

  beforeAll(async () => {
    const dataDir = mkdtempSync(join(tmpdir(), "reidlab-console-"));
    service = spawn(
      "python3",
      ["-m", "reidlab.cli", "serve", "--data-dir", dataDir, "--fixture", "--port", String(PORT)],
      { cwd: join(__dirname, "..", ".."), stdio: "inherit" },
    );
    await waitForService();
  }, 60_000);

  afterAll(() => {
    service?.kill();
  });

  it("attribute query, select true match, refine; timeline mirrors the log byte-for-byte", async () => {
    const api = new ApiClient({ baseUrl: BASE });
    const store = new ConsoleSession(api);
    await store.open({ dataset_id: "fixture" });

    // Round 1: attribute-only query. The service's fixture oracle judges
    // fragments against stored profiles, so top candidates are true matches.
    const round1 = await store.submitQuery({ attributes: { gender: "male" } }, 10);
    expect(round1.candidates.length).toBeGreaterThan(0);
    const match = round1.candidates[0].image_id;
    expect(round1.candidates[0].score).toBeGreaterThan(0);

    // Round 2: promote the match; the new round's query must carry it.
    const round2 = await store.selectToRefine(match, "same person, different view");
    expect(round2.query.image).toBe(match);
    expect(round2.query.text).toBe("same person, different view");
    expect(store.timeline.state!.rounds[0].action).toEqual({ kind: "selected", image_id: match });

    // The refined ranking must put the selected identity's images on top:
    // every refined candidate outscoring the rest carries a positive score.
    expect(round2.candidates[0].score).toBeGreaterThan(0);

    // Byte-for-byte: local timeline lines == exported log.
    expect(await store.matchesServerLog()).toBe(true);
    const logText = await api.sessionLogText(store.sessionId);
    expect(store.timeline.toLogText()).toBe(logText);

    // Replaying the exported log reproduces the exact timeline.
    const replay = Timeline.fromLogText(logText);
    expect(replay.state).toEqual(store.timeline.state);
    expect(replay.toLogText()).toBe(logText);
  }, 60_000);

  it("session state endpoint agrees with the console view", async () => {
    const api = new ApiClient({ baseUrl: BASE });
    const store = new ConsoleSession(api);
    await store.open({ dataset_id: "fixture" });
    await store.submitQuery({ text: "A person" }, 5);
    const state = await api.sessionState(store.sessionId);
    expect(state.session_id).toBe(store.sessionId);
    expect(state.rounds).toHaveLength(store.timeline.state!.rounds.length);
    await store.close();
    expect(store.isOpen).toBe(false);
    expect(await store.matchesServerLog()).toBe(true);
  }, 60_000);

  it("eval runs appear as dashboard rows with their metrics", async () => {
    const api = new ApiClient({ baseUrl: BASE });
    const created = await api.createEvalRun({
      setting: "standard",
      strategy: "pairwise",
      tau: 0.5,
      backend: { kind: "perfect" },
    });
    const deadline = Date.now() + 45_000;
    let record = created;
    while (record.status === "running" && Date.now() < deadline) {
      await new Promise((resolve) => setTimeout(resolve, 250));
      record = await api.getEvalRun(created.run_id);
    }
    expect(record.status).toBe("done");
    expect(record.result?.mAP).toBe(1.0);
    const rows = await api.listEvalRuns();
    expect(rows.some((r) => r.run_id === created.run_id)).toBe(true);
  }, 60_000);
});
