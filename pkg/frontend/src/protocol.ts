// Client side of the line-oriented status protocol. One command line per
// request; the HTTP shim returns the response lines as plain text.

export const JOB_STATES = [
  "submitted", "staged", "queued", "running", "done", "failed", "lost",
] as const;

export type JobState = (typeof JOB_STATES)[number];

export interface JobRow {
  jobId: string;
  site: string;
  nn: string; // "job0" or the task index as printed by the backend
  state: JobState;
  lastUpdate: number; // ms timestamp of the poll that last changed the row
}

export class ProtocolError extends Error {}

function isJobState(value: string): value is JobState {
  return (JOB_STATES as readonly string[]).includes(value);
}

function firstLine(text: string): string {
  const line = text.split("\n", 1)[0] ?? "";
  return line.trim();
}

function rejectErr(text: string): void {
  const line = firstLine(text);
  if (line.startsWith("ERR")) {
    throw new ProtocolError(line.slice(4) || "backend error");
  }
}

export function parseStatus(text: string, now: number): JobRow[] {
  rejectErr(text);
  const rows: JobRow[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line) continue;
    const parts = line.split(/\s+/);
    if (parts.length !== 5 || parts[0] !== "JOB") {
      throw new ProtocolError(`bad status line: ${line}`);
    }
    const [, jobId, site, nn, state] = parts as [string, string, string, string, string];
    if (!isJobState(state)) {
      throw new ProtocolError(`unknown job state: ${state}`);
    }
    rows.push({ jobId, site, nn, state, lastUpdate: now });
  }
  return rows;
}

export function parseDelegated(text: string): { dn: string; expiresAt: number } {
  rejectErr(text);
  const parts = firstLine(text).split(/\s+/);
  if (parts.length !== 3 || parts[0] !== "DELEGATED") {
    throw new ProtocolError(`bad delegation reply: ${firstLine(text)}`);
  }
  return { dn: parts[1]!, expiresAt: Number(parts[2]) };
}

export type PlanReply = { kind: "empty" } | { kind: "plan"; planFile: string; manifestFile: string };

export function parsePlan(text: string): PlanReply {
  rejectErr(text);
  const line = firstLine(text);
  if (line === "EMPTY") return { kind: "empty" };
  const parts = line.split(/\s+/);
  if (parts.length !== 3 || parts[0] !== "PLAN") {
    throw new ProtocolError(`bad plan reply: ${line}`);
  }
  return { kind: "plan", planFile: parts[1]!, manifestFile: parts[2]! };
}

export function parseSubmit(text: string): string {
  rejectErr(text);
  const parts = firstLine(text).split(/\s+/);
  if (parts.length !== 2 || parts[0] !== "HYPERJOB") {
    throw new ProtocolError(`bad submit reply: ${firstLine(text)}`);
  }
  return parts[1]!;
}

export type ResultReply = { kind: "pending" } | { kind: "ready"; path: string };

export function parseResult(text: string): ResultReply {
  rejectErr(text);
  const line = firstLine(text);
  if (line === "PENDING") return { kind: "pending" };
  if (!line) throw new ProtocolError("empty result reply");
  return { kind: "ready", path: line };
}

export interface Backend {
  send(line: string): Promise<string>;
  downloadUrl(hyperjobId: string): string;
}

export class HttpBackend implements Backend {
  constructor(private base: string = "") {}

  async send(line: string): Promise<string> {
    const resp = await fetch(`${this.base}/api`, { method: "POST", body: line });
    if (!resp.ok) throw new ProtocolError(`http ${resp.status}`);
    return resp.text();
  }

  downloadUrl(hyperjobId: string): string {
    return `${this.base}/api/download/${hyperjobId}`;
  }
}
