// HTML-string renderers. Pure functions of view state, testable without a DOM.

import { canSubmit, chipLabel, CHIP_FIELDS, type ComposerState } from "./composer.js";
import type { Timeline, TimelineRound } from "./timeline.js";
import type { DatasetInfo, QueryParts, RunRecord } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function thumb(imageUrl: (id: string) => string, imageId: string): string {
  return `<img class="thumb" src="${escapeHtml(imageUrl(imageId))}" alt="${escapeHtml(imageId)}" title="${escapeHtml(imageId)}">`;
}

export function renderQueryParts(parts: QueryParts, imageUrl: (id: string) => string): string {
  const chunks: string[] = [];
  if (parts.image) {
    chunks.push(`<span class="query-image">${thumb(imageUrl, parts.image)}</span>`);
  }
  if (parts.text) {
    chunks.push(`<span class="query-text">${escapeHtml(parts.text)}</span>`);
  }
  if (parts.attributes) {
    const chips = Object.entries(parts.attributes)
      .map(([field, value]) => `<span class="chip chip-set">${escapeHtml(field.replace(/_/g, " "))}: ${escapeHtml(String(value))}</span>`)
      .join("");
    chunks.push(`<span class="query-attrs">${chips}</span>`);
  }
  return chunks.join(" ");
}

export function renderComposer(state: ComposerState, datasets: DatasetInfo[], imageUrl: (id: string) => string): string {
  const chips = CHIP_FIELDS.map((field) => {
    const value = state.attributes[field];
    const set = value !== undefined;
    return `
      <span class="chip ${set ? "chip-set" : ""}" data-chip="${field}">
        ${escapeHtml(chipLabel(field))}${set ? `: ${escapeHtml(value!)}` : ""}
      </span>`;
  }).join("");
  const picked = state.image
    ? `<span class="picked">${thumb(imageUrl, state.image)}<button data-action="clear-image">clear</button></span>`
    : `<span class="muted">no image picked</span>`;
  const pickerOptions = datasets
    .flatMap((d) => d.sample_image_ids)
    .map((id) => `<option value="${escapeHtml(id)}">${escapeHtml(id)}</option>`)
    .join("");
  return `
    <div class="composer-chips">${chips}</div>
    <div class="composer-row">
      <input id="composer-text" type="text" placeholder="free-text description" value="${escapeHtml(state.text)}">
    </div>
    <div class="composer-row">
      ${picked}
      <select id="composer-pick"><option value="">pick an image…</option>${pickerOptions}</select>
      <input id="composer-image-id" type="text" placeholder="or enter an image id">
    </div>
    <div class="composer-row">
      <button id="composer-submit" ${canSubmit(state) ? "" : "disabled"}>Search</button>
    </div>`;
}

export function renderCandidateGrid(
  round: TimelineRound | null,
  imageUrl: (id: string) => string,
  sessionOpen: boolean,
): string {
  if (!round) {
    return `<p class="muted">No results yet. Compose a query to search the gallery.</p>`;
  }
  if (round.error) {
    return `<div class="banner banner-error">Round ${round.roundIndex} failed: ${escapeHtml(round.error)}</div>`;
  }
  const cards = round.candidates
    .map((candidate, rank) => {
      const selectButton = sessionOpen
        ? `<button data-action="select" data-image="${escapeHtml(candidate.image_id)}">use as query</button>`
        : `<button disabled title="session closed">use as query</button>`;
      return `
        <div class="card">
          ${thumb(imageUrl, candidate.image_id)}
          <div class="card-meta">
            <span class="rank">#${rank + 1}</span>
            <span class="score">${candidate.score.toFixed(3)}</span>
          </div>
          ${selectButton}
        </div>`;
    })
    .join("");
  return `<div class="grid">${cards}</div>`;
}

export function renderTimeline(timeline: Timeline, imageUrl: (id: string) => string): string {
  const state = timeline.state;
  if (!state) return "";
  const cards = state.rounds
    .map((round) => {
      const action =
        round.action.kind === "selected"
          ? `selected ${escapeHtml(round.action.image_id ?? "")}`
          : round.action.kind;
      return `
        <div class="timeline-card" data-round="${round.roundIndex}">
          <div class="timeline-head">Round ${round.roundIndex} <span class="badge">${escapeHtml(action)}</span></div>
          <div class="timeline-query">${renderQueryParts(round.query, imageUrl)}</div>
          <div class="muted">${round.candidates.length} candidates, ${round.backendCalls} backend calls${round.degraded ? ", degraded" : ""}</div>
        </div>`;
    })
    .join("");
  return `
    <div class="timeline-head">Session ${escapeHtml(state.sessionId)} (${state.status}, gallery ${state.gallerySize})</div>
    ${cards}`;
}

export function renderRunsTable(runs: RunRecord[]): string {
  if (runs.length === 0) {
    return `<p class="muted">No evaluation runs yet.</p>`;
  }
  const rows = runs
    .map((run) => {
      const mAP = run.result?.mAP !== undefined ? (100 * (run.result.mAP as number)).toFixed(1) : "-";
      const rank1 = run.result?.rank1 !== undefined ? (100 * (run.result.rank1 as number)).toFixed(1) : "-";
      return `
        <tr>
          <td class="mono">${escapeHtml(run.run_id.slice(0, 8))}</td>
          <td>${escapeHtml(String(run.config.setting ?? ""))}</td>
          <td>${escapeHtml(String(run.config.strategy ?? ""))}</td>
          <td><span class="badge badge-${run.status}">${run.status}</span></td>
          <td>${mAP}</td>
          <td>${rank1}</td>
        </tr>`;
    })
    .join("");
  return `
    <table>
      <thead><tr><th>run</th><th>setting</th><th>strategy</th><th>status</th><th>mAP</th><th>Rank-1</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}
