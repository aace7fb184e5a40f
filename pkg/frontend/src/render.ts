// Pure render functions: HTML strings from state, nothing else. The table
// is a pure function of the last merged STATUS response, which is what the
// snapshot test pins byte for byte.

import type { JobRow } from "./protocol.js";
import { completenessBadge, Progress } from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderTable(rows: JobRow[]): string {
  const body = rows
    .map((row) =>
      `<tr class="state-${row.state}">` +
      `<td>${escapeHtml(row.jobId)}</td>` +
      `<td>${escapeHtml(row.site)}</td>` +
      `<td>${escapeHtml(row.nn)}</td>` +
      `<td>${escapeHtml(row.state)}</td>` +
      `<td>${new Date(row.lastUpdate).toISOString()}</td>` +
      `</tr>`)
    .join("\n");
  return (
    `<table class="jobs">\n` +
    `<thead><tr><th>job</th><th>site</th><th>nn</th><th>state</th><th>updated</th></tr></thead>\n` +
    `<tbody>\n${body}\n</tbody>\n</table>`
  );
}

export function renderCountdown(seconds: number): string {
  if (seconds <= 0) return `<span class="countdown expired">delegation expired</span>`;
  const mm = Math.floor(seconds / 60);
  const ss = String(seconds % 60).padStart(2, "0");
  return `<span class="countdown">token valid ${mm}:${ss}</span>`;
}

export type DownloadView =
  | { kind: "none" }
  | { kind: "pending"; progress: Progress }
  | { kind: "ready"; url: string; progress: Progress };

export function renderDownload(view: DownloadView): string {
  if (view.kind === "none") return "";
  const badge = completenessBadge(view.progress);
  if (view.kind === "pending") {
    return (
      `<a class="download disabled" aria-disabled="true" ` +
      `title="results still pending">download results (${badge})</a>`
    );
  }
  return `<a class="download" href="${escapeHtml(view.url)}">download results (${badge})</a>`;
}

export function renderBanner(message: string | null): string {
  if (!message) return "";
  return `<div class="banner stale">${escapeHtml(message)}</div>`;
}
