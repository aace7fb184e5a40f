// Client-side session and table state. The table is merged monotonically:
// whatever a poll claims, a row never moves backward along the job state
// chain, and lastUpdate only bumps when the state actually changed.

import type { JobRow, JobState } from "./protocol.js";

export interface Session {
  dn: string;
  expiresAtMs: number;
}

export function sessionExpired(session: Session | null, nowMs: number): boolean {
  return session === null || nowMs >= session.expiresAtMs;
}

export function countdownSeconds(session: Session, nowMs: number): number {
  return Math.max(0, Math.ceil((session.expiresAtMs - nowMs) / 1000));
}

const STATE_RANK: Record<JobState, number> = {
  submitted: 0,
  staged: 1,
  queued: 2,
  running: 3,
  done: 4,
  failed: 4,
  lost: 4,
};

export function stateRank(state: JobState): number {
  return STATE_RANK[state];
}

export function mergeRows(prev: JobRow[], next: JobRow[]): JobRow[] {
  const known = new Map(prev.map((row) => [row.jobId, row]));
  return next.map((row) => {
    const old = known.get(row.jobId);
    if (!old) return row;
    if (old.state === row.state) return old;
    if (stateRank(row.state) < stateRank(old.state)) return old; // never backward
    return row;
  });
}

export interface Progress {
  total: number;
  done: number;
  failed: number;
  lost: number;
  settled: number; // done + failed + lost
}

export function progressOf(rows: JobRow[]): Progress {
  const members = rows.filter((row) => row.nn !== "job0");
  const count = (state: JobState) => members.filter((r) => r.state === state).length;
  const done = count("done");
  const failed = count("failed");
  const lost = count("lost");
  return { total: members.length, done, failed, lost, settled: done + failed + lost };
}

export function completenessBadge(progress: Progress): string {
  return `${progress.done}/${progress.total}`;
}
