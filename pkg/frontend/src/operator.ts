// Operator counting flow, three layers: pick a location, scan units while
// the server classifies each one, then validate surplus and sign off.
// All numbers shown come from server responses; the console does no
// reconciliation arithmetic of its own. Scans that fail with a network
// error are queued locally and flushed in order with their original
// event_ids when the connection returns.

import { ApiClient, ApiRequestFailed, NetworkDown } from "./api.js";
import { OfflineScanQueue } from "./queue.js";
import type { BatchTally, QueuedScan, SurplusEntry } from "./types.js";

export type Screen = "bins" | "scan" | "surplus";

export interface SurplusView extends SurplusEntry {
  acknowledged: boolean;
}

export interface FlowState {
  screen: Screen;
  sessionId: string;
  activeBin: string | null;
  pendingBins: string[];
  tallies: Record<string, BatchTally>;
  surplus: SurplusView[];
  blockingBatches: string[];
  unacknowledgedSurplus: string[];
  canSignOff: boolean;
  signedOff: boolean;
  lastMessage: string;
  queuedScans: number;
  offline: boolean;
}

export interface FlowOptions {
  clock?: () => number;
  makeEventId?: () => string;
}

function defaultEventId(): string {
  return `evt-${Date.now()}-${Math.random().toString(16).slice(2)}`;
}

export class OperatorFlow {
  readonly state: FlowState;
  private readonly clock: () => number;
  private readonly makeEventId: () => string;

  constructor(
    private readonly api: ApiClient,
    private readonly queue: OfflineScanQueue,
    sessionId: string,
    options: FlowOptions = {},
  ) {
    this.clock = options.clock ?? (() => Date.now() / 1000);
    this.makeEventId = options.makeEventId ?? defaultEventId;
    this.state = {
      screen: "bins",
      sessionId,
      activeBin: null,
      pendingBins: [],
      tallies: {},
      surplus: [],
      blockingBatches: [],
      unacknowledgedSurplus: [],
      canSignOff: false,
      signedOff: false,
      lastMessage: "",
      queuedScans: queue.length,
      offline: false,
    };
  }

  async loadBins(): Promise<void> {
    const progress = await this.api.progress(this.state.sessionId);
    this.state.pendingBins = Object.entries(progress.per_bin)
      .filter(([, state]) => state === "PENDING")
      .map(([bin]) => bin)
      .sort();
  }

  async selectBin(binCode: string): Promise<void> {
    try {
      await this.api.startBin(this.state.sessionId, binCode, this.clock());
    } catch (err) {
      if (err instanceof ApiRequestFailed) {
        this.state.lastMessage = `Cannot start ${binCode}: ${err.body.detail}`;
        return;
      }
      throw err;
    }
    this.state.activeBin = binCode;
    this.state.screen = "scan";
    this.state.signedOff = false;
    this.state.lastMessage = `Counting ${binCode}`;
    await this.refreshDetail();
  }

  /** One keyboard-wedge entry: the scanner typed a payload and sent Enter. */
  async handleScan(payload: string): Promise<void> {
    const scan: QueuedScan = {
      event_id: this.makeEventId(),
      session_id: this.state.sessionId,
      bin_code: this.state.activeBin!,
      payload,
      at: this.clock(),
    };
    try {
      const response = await this.api.submitScan(scan);
      this.state.offline = false;
      this.applyScanResponse(payload, response);
    } catch (err) {
      if (err instanceof NetworkDown) {
        this.queue.enqueue(scan);
        this.state.queuedScans = this.queue.length;
        this.state.offline = true;
        this.state.lastMessage = `Offline: ${this.queue.length} scan(s) queued`;
        return;
      }
      if (err instanceof ApiRequestFailed) {
        this.state.lastMessage = `Scan rejected (${err.body.error}): ${err.body.detail}`;
        return;
      }
      throw err;
    }
  }

  /** Re-deliver queued scans in order; server dedup makes retries harmless. */
  async flushQueue(): Promise<number> {
    const delivered = await this.queue.flush(async (scan) => {
      await this.api.submitScan(scan);
    });
    this.state.queuedScans = this.queue.length;
    if (delivered.length > 0) {
      this.state.offline = this.queue.length > 0;
      this.state.lastMessage = `Reconnected: ${delivered.length} queued scan(s) delivered`;
      await this.refreshDetail();
    }
    return delivered.length;
  }

  async acknowledge(huCode: string): Promise<void> {
    try {
      await this.api.ackSurplus(
        this.state.sessionId,
        this.state.activeBin!,
        huCode,
        this.clock(),
      );
    } catch (err) {
      if (err instanceof ApiRequestFailed) {
        this.state.lastMessage = `Acknowledgment rejected: ${err.body.detail}`;
        return;
      }
      throw err;
    }
    this.state.lastMessage = `${huCode} acknowledged`;
    await this.refreshDetail();
  }

  async signOff(): Promise<boolean> {
    try {
      await this.api.signOff(this.state.sessionId, this.state.activeBin!, this.clock());
    } catch (err) {
      if (err instanceof ApiRequestFailed && err.body.error === "IncompleteBatchList") {
        this.state.blockingBatches = err.body.blocking_batches ?? [];
        this.state.unacknowledgedSurplus = err.body.unacknowledged_surplus ?? [];
        this.state.canSignOff = false;
        this.state.lastMessage =
          `Sign-off blocked: batches [${this.state.blockingBatches.join(", ")}], ` +
          `surplus [${this.state.unacknowledgedSurplus.join(", ")}]`;
        return false;
      }
      if (err instanceof ApiRequestFailed) {
        this.state.lastMessage = `Sign-off rejected: ${err.body.detail}`;
        return false;
      }
      throw err;
    }
    this.state.signedOff = true;
    this.state.screen = "bins";
    this.state.activeBin = null;
    this.state.lastMessage = "Bin signed off";
    return true;
  }

  toSurplusScreen(): void {
    this.state.screen = "surplus";
  }

  private applyScanResponse(payload: string, response: import("./types.js").ScanResponse): void {
    switch (response.classification) {
      case "MATCH":
        this.state.lastMessage = `MATCH: ${payload}`;
        break;
      case "DUPLICATE":
        this.state.lastMessage = `DUPLICATE: already counted`;
        break;
      case "MISPLACED":
        this.state.lastMessage = `MISPLACED: return to ${response.designated_bin}`;
        break;
      case "UNKNOWN":
        this.state.lastMessage = `UNKNOWN: not in reference, needs validation`;
        break;
    }
    if (response.bin) {
      this.state.tallies = response.bin.per_batch;
      this.mergeSurplus(response.bin.surplus, response.unacknowledged_surplus ?? []);
    }
    if (response.blocking_batches !== undefined) {
      this.state.blockingBatches = response.blocking_batches;
      this.state.unacknowledgedSurplus = response.unacknowledged_surplus ?? [];
      this.updateSignOffGate();
    }
  }

  private async refreshDetail(): Promise<void> {
    const detail = await this.api.binDetail(this.state.sessionId, this.state.activeBin!);
    this.state.tallies = detail.current.per_batch;
    this.state.blockingBatches = detail.blocking_batches;
    this.state.unacknowledgedSurplus = detail.unacknowledged_surplus;
    this.mergeSurplus(detail.current.surplus, detail.unacknowledged_surplus);
    this.updateSignOffGate();
  }

  private mergeSurplus(entries: SurplusEntry[], unacknowledged: string[]): void {
    const pending = new Set(unacknowledged);
    this.state.surplus = entries.map((entry) => ({
      ...entry,
      acknowledged: !pending.has(entry.hu_code),
    }));
  }

  // sign-off becomes available exactly when the server reports nothing
  // blocking; the console never second-guesses the gate
  private updateSignOffGate(): void {
    this.state.canSignOff =
      this.state.blockingBatches.length === 0 &&
      this.state.unacknowledgedSurplus.length === 0;
  }
}
