// The three-step flow (delegate -> select/submit -> monitor/download) as a
// plain state machine over the protocol, independent of the DOM so the
// tests can drive it against a scripted backend.

import {
  Backend, JobRow, parseDelegated, parsePlan, parseResult, parseStatus,
  parseSubmit,
} from "./protocol.js";
import { mergeRows, progressOf, Session, sessionExpired } from "./model.js";
import { DownloadView } from "./render.js";

export interface SubmissionForm {
  runLo: number;
  runHi: number;
  selectionType: string;
  processingVersion: string;
  sites: string[]; // priority order
  chunk: number;
  balance: "none" | "rr";
  mode: "index" | "priority";
}

export function validateForm(form: SubmissionForm): string | null {
  if (form.runLo > form.runHi) return "run range lower bound exceeds upper bound";
  if (form.sites.length === 0) return "select at least one site";
  if (form.chunk < 1) return "chunk size must be at least 1";
  return null;
}

export class ExpiredDelegationError extends Error {
  constructor() {
    super("delegation expired: upload a new one");
  }
}

export class Portal {
  session: Session | null = null;
  hyperjobId: string | null = null;
  rows: JobRow[] = [];
  resultPath: string | null = null;
  banner: string | null = null;
  message: string | null = null; // e.g. the "no data" notice
  private pollInFlight = false;

  constructor(private backend: Backend, private now: () => number = Date.now) {}

  expired(): boolean {
    return sessionExpired(this.session, this.now());
  }

  async delegate(dn: string, lifetimeSeconds: number): Promise<Session> {
    const reply = await this.backend.send(`DELEGATE ${dn} ${lifetimeSeconds}`);
    parseDelegated(reply);
    // a fresh delegation replaces whatever session existed before
    this.session = { dn, expiresAtMs: this.now() + lifetimeSeconds * 1000 };
    return this.session;
  }

  // Gate at the client boundary: an expired session must never reach the
  // backend with SUBMIT (or even PLAN).
  async submit(form: SubmissionForm): Promise<string | null> {
    if (this.expired()) throw new ExpiredDelegationError();
    const invalid = validateForm(form);
    if (invalid) {
      this.message = invalid;
      return null;
    }
    const balance = form.balance === "rr" ? "rr" : "none";
    const plan = parsePlan(await this.backend.send(
      `PLAN ${form.runLo} ${form.runHi} ${form.selectionType} ` +
      `${form.processingVersion} ${form.sites.join(",")} ${form.chunk} ` +
      `${form.mode} ${balance}`));
    if (plan.kind === "empty") {
      this.message = "no data matches the selection";
      return null;
    }
    if (this.expired()) throw new ExpiredDelegationError();
    const reply = await this.backend.send(
      `SUBMIT ${plan.planFile} ${plan.manifestFile}`);
    this.hyperjobId = parseSubmit(reply);
    this.rows = [];
    this.resultPath = null;
    this.message = null;
    return this.hyperjobId;
  }

  // One poll round: STATUS merged monotonically, RESULT refreshed once all
  // rows are settled. At most one poll is in flight at a time; a backend
  // failure raises the stale banner and keeps the last good table.
  async pollOnce(): Promise<void> {
    if (this.hyperjobId === null || this.pollInFlight) return;
    this.pollInFlight = true;
    try {
      const status = await this.backend.send(`STATUS ${this.hyperjobId}`);
      this.rows = mergeRows(this.rows, parseStatus(status, this.now()));
      if (this.resultPath === null) {
        const result = parseResult(await this.backend.send(`RESULT ${this.hyperjobId}`));
        if (result.kind === "ready") this.resultPath = result.path;
      }
      this.banner = null;
    } catch (err) {
      this.banner = `backend unreachable, showing stale data (${String(err)})`;
    } finally {
      this.pollInFlight = false;
    }
  }

  download(): DownloadView {
    if (this.hyperjobId === null) return { kind: "none" };
    const progress = progressOf(this.rows);
    if (this.resultPath === null) return { kind: "pending", progress };
    return { kind: "ready", url: this.backend.downloadUrl(this.hyperjobId), progress };
  }
}
