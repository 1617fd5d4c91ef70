import { describe, expect, it } from "vitest";

import { emptyComposer, setChip, setText } from "../src/composer.js";
import { renderCandidateGrid, renderComposer, renderQueryParts, renderRunsTable } from "../src/render.js";
import { Timeline, type TimelineRound } from "../src/timeline.js";
import { renderTimeline } from "../src/render.js";
import type { RunRecord } from "../src/types.js";

const imageUrl = (id: string) => `/v1/images/${id}`;

function round(overrides: Partial<TimelineRound> = {}): TimelineRound {
  return {
    roundIndex: 0,
    query: { text: "a person" },
    candidates: [
      { image_id: "a", score: 1.0 },
      { image_id: "b", score: -0.25 },
    ],
    action: { kind: "pending" },
    backendCalls: 10,
    degraded: false,
    ...overrides,
  };
}

describe("composer rendering", () => {
  it("disables submit when the composer is empty", () => {
    expect(renderComposer(emptyComposer(), [], imageUrl)).toContain("disabled");
    const filled = renderComposer(setText(emptyComposer(), "blue top"), [], imageUrl);
    expect(filled).not.toContain('id="composer-submit" disabled');
  });

  it("marks set chips", () => {
    const html = renderComposer(setChip(emptyComposer(), "hair", "long"), [], imageUrl);
    expect(html).toContain("chip-set");
    expect(html).toContain("hair: long");
  });
});

describe("candidate grid rendering", () => {
  it("shows thumbnails with scores", () => {
    const html = renderCandidateGrid(round(), imageUrl, true);
    expect(html).toContain("/v1/images/a");
    expect(html).toContain("1.000");
    expect(html).toContain("-0.250");
  });

  it("disables selection when the session is closed", () => {
    const html = renderCandidateGrid(round(), imageUrl, false);
    expect(html).toContain('title="session closed"');
    expect(html).not.toContain('data-action="select"');
  });

  it("renders failed rounds as an inline banner", () => {
    const html = renderCandidateGrid(round({ error: "endpoint down", candidates: [] }), imageUrl, true);
    expect(html).toContain("banner-error");
    expect(html).toContain("endpoint down");
  });
});

describe("timeline rendering", () => {
  it("echoes image and text parts on the round card", () => {
    const timeline = new Timeline();
    timeline.applyLines([
      JSON.stringify({ event: "opened", session_id: "s1", scope: {}, gallery_size: 5, config: {} }),
      JSON.stringify({
        event: "round",
        round_index: 0,
        query: { image: "fx_1", text: "now with a coat" },
        candidates: [],
        action: { kind: "pending" },
        backend_calls: 5,
      }),
    ]);
    const html = renderTimeline(timeline, imageUrl);
    expect(html).toContain("/v1/images/fx_1");
    expect(html).toContain("now with a coat");
  });

  it("escapes untrusted text", () => {
    expect(renderQueryParts({ text: "<script>alert(1)</script>" }, imageUrl)).not.toContain("<script>");
  });
});

describe("runs table", () => {
  it("renders percentage metrics per row", () => {
    const runs: RunRecord[] = [
      {
        run_id: "abcd1234ef",
        kind: "eval",
        status: "done",
        config: { setting: "standard", strategy: "pairwise" },
        created_at: 1,
        result: { mAP: 1.0, rank1: 1.0 },
      },
      {
        run_id: "ffff0000aa",
        kind: "eval",
        status: "running",
        config: { setting: "cc", strategy: "best_choice" },
        created_at: 2,
      },
    ];
    const html = renderRunsTable(runs);
    expect(html).toContain("100.0");
    expect(html).toContain("badge-running");
    expect(html).toContain("best_choice");
  });
});
