// Offline scan queue. Scans that could not reach the server are persisted
// (localStorage in the browser, any Storage-like object in tests) and
// flushed in order with their ORIGINAL event_ids — the server dedups, so
// at-least-once delivery is safe across page reloads.

import type { QueuedScan } from "./types.js";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class MemoryStorage implements StorageLike {
  private data = new Map<string, string>();
  getItem(key: string) {
    return this.data.get(key) ?? null;
  }
  setItem(key: string, value: string) {
    this.data.set(key, value);
  }
  removeItem(key: string) {
    this.data.delete(key);
  }
}

const STORAGE_KEY = "stocktake.scan-queue";

export class OfflineScanQueue {
  private items: QueuedScan[];

  constructor(private readonly storage: StorageLike) {
    const raw = storage.getItem(STORAGE_KEY);
    this.items = raw ? (JSON.parse(raw) as QueuedScan[]) : [];
  }

  get length(): number {
    return this.items.length;
  }

  snapshot(): QueuedScan[] {
    return [...this.items];
  }

  enqueue(scan: QueuedScan): void {
    this.items.push(scan);
    this.persist();
  }

  /** Deliver queued scans in order; stops at the first transport failure.
   * Returns the scans that were accepted (each removed from the queue). */
  async flush(send: (scan: QueuedScan) => Promise<void>): Promise<QueuedScan[]> {
    const delivered: QueuedScan[] = [];
    while (this.items.length > 0) {
      const head = this.items[0];
      try {
        await send(head);
      } catch {
        break;
      }
      this.items.shift();
      delivered.push(head);
      this.persist();
    }
    return delivered;
  }

  private persist(): void {
    this.storage.setItem(STORAGE_KEY, JSON.stringify(this.items));
  }
}
