// Supervisor dashboard: polls progress, discrepancies and activity, and
// renders them as HTML strings. Rendering is pure (data in, markup out) so
// the snapshot tests can assert every displayed number against recorded
// API fixtures without a DOM.

import { ApiClient } from "./api.js";
import type { ActivityTimeline, DiscrepancyReport, ProgressReport } from "./types.js";

function esc(value: unknown): string {
  return String(value).replace(/[&<>"]/g, (c) =>
    c === "&" ? "&amp;" : c === "<" ? "&lt;" : c === ">" ? "&gt;" : "&quot;",
  );
}

export function renderProgressTiles(report: ProgressReport): string {
  const tiles = [
    `<div class="tile tile-completed"><span class="count">${report.completed}</span> completed</div>`,
    `<div class="tile tile-ongoing"><span class="count">${report.ongoing}</span> ongoing</div>`,
    `<div class="tile tile-pending"><span class="count">${report.pending}</span> pending</div>`,
  ];
  const chips = Object.entries(report.per_bin)
    .sort(([a], [b]) => (a < b ? -1 : 1))
    .map(([bin, state]) => `<span class="chip chip-${state.toLowerCase()}">${esc(bin)}</span>`)
    .join("");
  return `<section class="progress">${tiles.join("")}<div class="bins">${chips}</div></section>`;
}

export function renderDiscrepancies(report: DiscrepancyReport): string {
  const surplusRows = report.surplus_units
    .map(
      (row) =>
        `<tr><td>${esc(row.hu_code)}</td><td>${esc(row.found_bin)}</td>` +
        `<td>${esc(row.designated_bin)}</td>` +
        `<td>${row.acknowledged ? "acknowledged" : "pending"}</td></tr>`,
    )
    .join("");
  const shortageRows = Object.entries(report.shortage_by_batch)
    .sort(([a], [b]) => (a < b ? -1 : 1))
    .map(([batchCode, count]) => `<tr><td>${esc(batchCode)}</td><td>${count}</td></tr>`)
    .join("");
  return (
    `<section class="discrepancies">` +
    `<h3>Surplus (${report.surplus_units.length})</h3>` +
    `<table class="surplus"><thead><tr><th>unit</th><th>found in</th><th>belongs in</th><th>status</th></tr></thead>` +
    `<tbody>${surplusRows}</tbody></table>` +
    `<h3>Shortage by batch (${Object.keys(report.shortage_by_batch).length})</h3>` +
    `<table class="shortage"><thead><tr><th>batch</th><th>missing</th></tr></thead>` +
    `<tbody>${shortageRows}</tbody></table></section>`
  );
}

export function renderActivityStrip(timeline: ActivityTimeline): string {
  const gapsByOperator = new Map<string, number>();
  for (const gap of timeline.idle_gaps) {
    gapsByOperator.set(gap.operator, (gapsByOperator.get(gap.operator) ?? 0) + 1);
  }
  const strips = Object.entries(timeline.per_operator)
    .sort(([a], [b]) => (a < b ? -1 : 1))
    .map(([operator, events]) => {
      const gaps = gapsByOperator.get(operator) ?? 0;
      const gapMarkup = timeline.idle_gaps
        .filter((g) => g.operator === operator)
        .map(
          (g) =>
            `<span class="idle-gap" title="idle ${g.gap_seconds.toFixed(0)}s from ${g.gap_start.toFixed(0)}">` +
            `${g.gap_seconds.toFixed(0)}s idle</span>`,
        )
        .join("");
      return (
        `<div class="operator-strip${gaps ? " has-idle" : ""}">` +
        `<span class="operator">${esc(operator)}</span>` +
        `<span class="events">${events.length} events</span>${gapMarkup}</div>`
      );
    })
    .join("");
  return `<section class="activity">${strips}</section>`;
}

export function renderStaleBadge(stale: boolean): string {
  return stale
    ? `<span class="badge badge-stale">stale data - last poll failed</span>`
    : `<span class="badge badge-live">live</span>`;
}

export interface DashboardView {
  html: string;
  stale: boolean;
}

export class Dashboard {
  stale = false;

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
  ) {}

  async poll(): Promise<DashboardView> {
    try {
      const [progress, discrepancies, activity] = await Promise.all([
        this.api.progress(this.sessionId),
        this.api.discrepancies(this.sessionId),
        this.api.activity(this.sessionId),
      ]);
      this.stale = false;
      return {
        html:
          renderStaleBadge(false) +
          renderProgressTiles(progress) +
          renderDiscrepancies(discrepancies) +
          renderActivityStrip(activity),
        stale: false,
      };
    } catch {
      this.stale = true;
      return { html: renderStaleBadge(true), stale: true };
    }
  }
}

export function startPolling(
  dashboard: Dashboard,
  render: (view: DashboardView) => void,
  intervalMs = 2000,
): () => void {
  let stopped = false;
  (async function loop() {
    while (!stopped) {
      const started = Date.now();
      const view = await dashboard.poll();
      if (stopped) break;
      render(view);
      const wait = Math.max(0, intervalMs - (Date.now() - started));
      await new Promise((resolve) => setTimeout(resolve, wait));
    }
  })();
  return () => {
    stopped = true;
  };
}
