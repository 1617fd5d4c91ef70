// Session timeline: folds the service's NDJSON event lines into view state.
// Raw lines are retained verbatim, so toLogText() mirrors the server log
// byte-for-byte and replaying an exported log rebuilds the same state.

import type { Candidate, QueryParts, RoundAction, SessionEvent } from "./types.js";

export interface TimelineRound {
  roundIndex: number;
  query: QueryParts;
  candidates: Candidate[];
  action: RoundAction;
  backendCalls: number;
  degraded: boolean;
  error?: string;
}

export interface TimelineState {
  sessionId: string;
  scope: Record<string, unknown>;
  gallerySize: number;
  status: "open" | "closed";
  rounds: TimelineRound[];
}

export class Timeline {
  private lines: string[] = [];
  state: TimelineState | null = null;

  applyLines(lines: string[]): void {
    for (const line of lines) {
      this.applyLine(line);
    }
  }

  private applyLine(line: string): void {
    const event = JSON.parse(line) as SessionEvent;
    if (event.event === "opened") {
      if (this.state !== null) throw new Error("timeline already opened");
      this.state = {
        sessionId: event.session_id,
        scope: event.scope,
        gallerySize: event.gallery_size,
        status: "open",
        rounds: [],
      };
    } else {
      if (this.state === null) throw new Error("timeline not opened yet");
      if (event.event === "round") {
        this.state.rounds.push({
          roundIndex: event.round_index,
          query: event.query,
          candidates: event.candidates,
          action: event.action,
          backendCalls: event.backend_calls,
          degraded: event.degraded ?? false,
          error: event.error,
        });
      } else if (event.event === "action") {
        const round = this.state.rounds[event.round_index];
        if (!round) throw new Error(`action for unknown round ${event.round_index}`);
        round.action = event.action;
      } else if (event.event === "closed") {
        this.state.status = "closed";
      } else {
        throw new Error(`unknown event in log line: ${line}`);
      }
    }
    this.lines.push(line);
  }

  latestRound(): TimelineRound | null {
    if (!this.state || this.state.rounds.length === 0) return null;
    return this.state.rounds[this.state.rounds.length - 1];
  }

  logLines(): string[] {
    return [...this.lines];
  }

  toLogText(): string {
    return this.lines.map((line) => line + "\n").join("");
  }

  static fromLogText(text: string): Timeline {
    const timeline = new Timeline();
    timeline.applyLines(text.split("\n").filter((line) => line.length > 0));
    return timeline;
  }
}
