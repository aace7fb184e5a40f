// DOM wiring for the three-step flow. All logic lives in Portal; this file
// only reads form inputs, schedules the 2 s poll, and paints the strings
// the render functions produce.

import { HttpBackend } from "./protocol.js";
import { countdownSeconds } from "./model.js";
import { Portal, SubmissionForm } from "./controller.js";
import { renderBanner, renderCountdown, renderDownload, renderTable } from "./render.js";

const POLL_INTERVAL_MS = 2000;

const backend = new HttpBackend("");
const portal = new Portal(backend);

const el = (id: string) => document.getElementById(id) as HTMLElement;
const input = (id: string) => document.getElementById(id) as HTMLInputElement;

function readForm(): SubmissionForm {
  return {
    runLo: Number(input("run-lo").value),
    runHi: Number(input("run-hi").value),
    selectionType: input("sel-type").value.trim(),
    processingVersion: input("proc").value.trim(),
    sites: input("sites").value.split(",").map((s) => s.trim()).filter(Boolean),
    chunk: Number(input("chunk").value),
    balance: input("balance-rr").checked ? "rr" : "none",
    mode: "index",
  };
}

function paint(): void {
  const expired = portal.expired();
  el("session").innerHTML = portal.session
    ? `<code>${portal.session.dn}</code> ` +
      renderCountdown(countdownSeconds(portal.session, Date.now()))
    : "<em>no delegation uploaded</em>";
  (el("submit-btn") as HTMLButtonElement).disabled =
    expired || portal.session === null;
  el("banner").innerHTML = renderBanner(portal.banner);
  el("notice").textContent = portal.message ?? "";
  el("table").innerHTML = portal.hyperjobId
    ? `<h3>hyperjob ${portal.hyperjobId}</h3>` + renderTable(portal.rows)
    : "";
  el("download").innerHTML = renderDownload(portal.download());
}

async function onDelegate(): Promise<void> {
  try {
    await portal.delegate(input("dn").value.trim(), Number(input("lifetime").value));
    portal.message = null;
  } catch (err) {
    portal.message = String(err);
  }
  paint();
}

async function onSubmit(): Promise<void> {
  try {
    await portal.submit(readForm());
  } catch (err) {
    portal.message = String(err);
  }
  paint();
}

el("delegate-btn").addEventListener("click", () => void onDelegate());
el("submit-btn").addEventListener("click", () => void onSubmit());

setInterval(() => {
  void portal.pollOnce().then(paint);
}, POLL_INTERVAL_MS);
setInterval(paint, 1000); // keep the countdown moving
paint();
