// Console session store: drives the /v1 session endpoints and folds every
// mutation response into the timeline. The view never invents state; it only
// reflects what the service returned.

import { ApiClient } from "./api.js";
import { Timeline, type TimelineRound } from "./timeline.js";
import type { QueryParts } from "./types.js";

export class ConsoleSession {
  readonly timeline = new Timeline();

  constructor(private readonly api: ApiClient) {}

  get sessionId(): string {
    const state = this.timeline.state;
    if (!state) throw new Error("session not opened");
    return state.sessionId;
  }

  get isOpen(): boolean {
    return this.timeline.state?.status === "open";
  }

  async open(scope: Record<string, unknown>, k = 10): Promise<void> {
    this.timeline.applyLines(await this.api.openSession(scope, k));
  }

  async submitQuery(parts: QueryParts, k?: number): Promise<TimelineRound> {
    this.timeline.applyLines(await this.api.submitQuery(this.sessionId, parts, k));
    const round = this.timeline.latestRound();
    if (!round) throw new Error("service returned no round");
    return round;
  }

  async selectToRefine(imageId: string, extraText?: string): Promise<TimelineRound> {
    this.timeline.applyLines(await this.api.select(this.sessionId, imageId, extraText));
    const round = this.timeline.latestRound();
    if (!round) throw new Error("service returned no round");
    return round;
  }

  async close(): Promise<void> {
    this.timeline.applyLines(await this.api.closeSession(this.sessionId));
  }

  /** Byte-for-byte check of the local timeline against the server log. */
  async matchesServerLog(): Promise<boolean> {
    const serverLog = await this.api.sessionLogText(this.sessionId);
    return serverLog === this.timeline.toLogText();
  }
}
