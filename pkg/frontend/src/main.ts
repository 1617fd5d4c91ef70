// Console bootstrap: wires DOM events to the session store and renderers.

import { ApiClient, ApiError } from "./api.js";
import {
  canSubmit,
  emptyComposer,
  setChip,
  setImage,
  setText,
  toQueryParts,
  type ComposerState,
} from "./composer.js";
import { renderCandidateGrid, renderComposer, renderRunsTable, renderTimeline } from "./render.js";
import { ConsoleSession } from "./store.js";
import type { AttributeField, DatasetInfo } from "./types.js";

const baseUrl = window.location.origin;

let api = new ApiClient({ baseUrl });
let session: ConsoleSession | null = null;
let composer: ComposerState = emptyComposer();
let datasets: DatasetInfo[] = [];

const el = (id: string) => document.getElementById(id)!;
const imageUrl = (id: string) => api.imageUrl(id);

function banner(message: string, kind: "error" | "info" = "error"): void {
  const target = el("banner");
  target.innerHTML = message
    ? `<div class="banner banner-${kind}">${message}</div>`
    : "";
}

function renderAll(): void {
  el("composer").innerHTML = renderComposer(composer, datasets, imageUrl);
  const round = session?.timeline.latestRound() ?? null;
  el("grid").innerHTML = renderCandidateGrid(round, imageUrl, session?.isOpen ?? false);
  el("timeline").innerHTML = session ? renderTimeline(session.timeline, imageUrl) : "";
  bindComposer();
  bindGrid();
}

function bindComposer(): void {
  document.querySelectorAll<HTMLElement>("[data-chip]").forEach((chip) => {
    chip.onclick = () => {
      const field = chip.dataset.chip as AttributeField;
      const current = composer.attributes[field] ?? "";
      const value = window.prompt(`Value for "${field.replace(/_/g, " ")}" (empty clears)`, current);
      if (value === null) return;
      composer = setChip(composer, field, value);
      renderAll();
    };
  });
  const text = el("composer-text") as HTMLInputElement;
  text.onchange = () => {
    composer = setText(composer, text.value);
    renderAll();
  };
  const pick = el("composer-pick") as HTMLSelectElement;
  pick.onchange = () => {
    if (pick.value) {
      composer = setImage(composer, pick.value);
      renderAll();
    }
  };
  const manual = el("composer-image-id") as HTMLInputElement;
  manual.onchange = () => {
    composer = setImage(composer, manual.value.trim() || null);
    renderAll();
  };
  const clear = document.querySelector<HTMLButtonElement>('[data-action="clear-image"]');
  if (clear) {
    clear.onclick = () => {
      composer = setImage(composer, null);
      renderAll();
    };
  }
  (el("composer-submit") as HTMLButtonElement).onclick = () => void submitQuery();
}

function bindGrid(): void {
  document.querySelectorAll<HTMLButtonElement>('[data-action="select"]').forEach((button) => {
    button.onclick = () => void selectCandidate(button.dataset.image!);
  });
}

async function ensureSession(): Promise<ConsoleSession> {
  if (session && session.isOpen) return session;
  const fresh = new ConsoleSession(api);
  const scope = datasets.length > 0 ? { dataset_id: datasets[0].dataset_id } : { all: true };
  await fresh.open(scope);
  session = fresh;
  return fresh;
}

async function submitQuery(): Promise<void> {
  if (!canSubmit(composer)) return;
  banner("");
  try {
    const active = await ensureSession();
    await active.submitQuery(toQueryParts(composer));
    renderAll();
  } catch (error) {
    // composer state is preserved on failure
    banner(describe(error));
  }
}

async function selectCandidate(imageId: string): Promise<void> {
  if (!session) return;
  banner("");
  const extra = window.prompt("Optional refinement text for the next round", "") ?? undefined;
  try {
    await session.selectToRefine(imageId, extra || undefined);
    composer = setImage(emptyComposer(), imageId);
    renderAll();
  } catch (error) {
    if (error instanceof ApiError && error.code === "invalid_selection") {
      banner("That candidate is no longer selectable (the round advanced). Refresh and retry.");
    } else {
      banner(describe(error));
    }
  }
}

async function refreshRuns(): Promise<void> {
  try {
    const runs = await api.listEvalRuns();
    el("runs").innerHTML = renderRunsTable(runs);
  } catch (error) {
    banner(describe(error));
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  return String(error);
}

async function bootstrap(): Promise<void> {
  const tokenInput = el("token") as HTMLInputElement;
  tokenInput.onchange = () => {
    api = new ApiClient({ baseUrl, token: tokenInput.value.trim() || undefined });
    void start();
  };
  (el("close-session") as HTMLButtonElement).onclick = async () => {
    if (session && session.isOpen) {
      await session.close();
      renderAll();
    }
  };
  (el("new-session") as HTMLButtonElement).onclick = async () => {
    session = null;
    composer = emptyComposer();
    await ensureSession();
    renderAll();
  };
  (el("refresh-runs") as HTMLButtonElement).onclick = () => void refreshRuns();
  await start();
}

async function start(): Promise<void> {
  try {
    datasets = await api.listDatasets();
    banner("");
  } catch (error) {
    banner(`Cannot reach the service: ${describe(error)}. Enter a token if one is required.`);
    datasets = [];
  }
  renderAll();
  await refreshRuns();
}

void bootstrap();
