// Browser wiring: connects the operator flow and the supervisor dashboard
// to the DOM. A keyboard-wedge scanner types the payload into the focused
// input and sends Enter; nothing here computes inventory numbers.

import { ApiClient, fetchTransport } from "./api.js";
import { Dashboard, startPolling } from "./dashboard.js";
import { OperatorFlow } from "./operator.js";
import { OfflineScanQueue } from "./queue.js";
import type { FlowState } from "./operator.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderFlow(state: FlowState): void {
  el("screen-bins").hidden = state.screen !== "bins";
  el("screen-scan").hidden = state.screen !== "scan";
  el("screen-surplus").hidden = state.screen !== "surplus";
  el("message").textContent = state.lastMessage;
  el("queue-badge").textContent = state.queuedScans
    ? `${state.queuedScans} queued offline`
    : "";

  const bins = el("bin-list");
  bins.innerHTML = state.pendingBins
    .map((bin) => `<button class="bin" data-bin="${bin}">${bin}</button>`)
    .join("");

  el("active-bin").textContent = state.activeBin ?? "";
  const tallies = Object.entries(state.tallies)
    .map(
      ([batch, t]) =>
        `<tr><td>${batch}</td><td>${t.counted_qty} / ${t.expected_qty}</td></tr>`,
    )
    .join("");
  el("tallies").innerHTML = `<tbody>${tallies}</tbody>`;

  el("surplus-list").innerHTML = state.surplus
    .map(
      (s) =>
        `<li>${s.hu_code} -> return to ${s.designated_bin} ` +
        (s.acknowledged
          ? `<em>acknowledged</em>`
          : `<button class="ack" data-hu="${s.hu_code}">acknowledge</button>`) +
        `</li>`,
    )
    .join("");
  (el("signoff") as HTMLButtonElement).disabled = !state.canSignOff;
}

function bootOperator(): void {
  const server = (el("server") as HTMLInputElement).value;
  const token = (el("token") as HTMLInputElement).value;
  const sessionId = (el("session") as HTMLInputElement).value;
  const api = new ApiClient(fetchTransport(server, token));
  const queue = new OfflineScanQueue(window.localStorage);
  const flow = new OperatorFlow(api, queue, sessionId);

  const rerender = () => renderFlow(flow.state);
  void flow.loadBins().then(rerender);

  el("bin-list").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const bin = target.dataset.bin;
    if (bin) void flow.selectBin(bin).then(rerender);
  });

  const scanInput = el<HTMLInputElement>("scan-input");
  scanInput.addEventListener("keydown", (event) => {
    if (event.key !== "Enter" || !scanInput.value) return;
    const payload = scanInput.value;
    scanInput.value = "";
    void flow.handleScan(payload).then(rerender);
  });

  el("surplus-list").addEventListener("click", (event) => {
    const hu = (event.target as HTMLElement).dataset.hu;
    if (hu) void flow.acknowledge(hu).then(rerender);
  });
  el("to-surplus").addEventListener("click", () => {
    flow.toSurplusScreen();
    rerender();
  });
  el("signoff").addEventListener("click", () => {
    void flow.signOff().then(() => flow.loadBins()).then(rerender);
  });

  // flush the offline queue whenever connectivity returns, and retry slowly
  window.addEventListener("online", () => void flow.flushQueue().then(rerender));
  setInterval(() => {
    if (flow.state.queuedScans > 0) void flow.flushQueue().then(rerender);
  }, 5000);
}

function bootDashboard(): void {
  const server = (el("server") as HTMLInputElement).value;
  const token = (el("token") as HTMLInputElement).value;
  const sessionId = (el("session") as HTMLInputElement).value;
  const api = new ApiClient(fetchTransport(server, token));
  const dashboard = new Dashboard(api, sessionId);
  const stop = startPolling(dashboard, (view) => {
    el("dashboard-root").innerHTML = view.html;
  });
  window.addEventListener("hashchange", stop, { once: true });
}

function route(): void {
  const operator = window.location.hash !== "#dashboard";
  el("view-operator").hidden = !operator;
  el("view-dashboard").hidden = operator;
}

window.addEventListener("hashchange", route);
document.addEventListener("DOMContentLoaded", () => {
  route();
  el("connect-operator").addEventListener("click", bootOperator);
  el("connect-dashboard").addEventListener("click", bootDashboard);
});
