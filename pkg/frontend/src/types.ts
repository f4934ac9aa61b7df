// Server JSON contracts (snake_case field names are fixed server-side).

export interface BatchTally {
  expected_qty: number;
  counted_qty: number;
  shortage_qty: number;
  missing_hu_codes: string[];
}

export interface SurplusEntry {
  hu_code: string;
  designated_bin: string; // "UNKNOWN_ORIGIN" when the reference never saw it
}

export interface BinReconciliation {
  bin_code: string;
  per_batch: Record<string, BatchTally>;
  surplus: SurplusEntry[];
  complete: boolean;
}

export interface ScanResponse {
  classification: "MATCH" | "DUPLICATE" | "MISPLACED" | "UNKNOWN";
  designated_bin?: string;
  bin?: BinReconciliation;
  blocking_batches?: string[];
  unacknowledged_surplus?: string[];
}

export interface BinDetail {
  bin_code: string;
  state: "PENDING" | "ONGOING" | "COMPLETED";
  assigned_operator: string | null;
  scan_count: number;
  current: BinReconciliation;
  blocking_batches: string[];
  unacknowledged_surplus: string[];
  acknowledged_surplus: string[];
}

export interface ProgressReport {
  completed: number;
  ongoing: number;
  pending: number;
  per_bin: Record<string, string>;
}

export interface SurplusRow {
  hu_code: string;
  found_bin: string;
  designated_bin: string;
  acknowledged: boolean;
}

export interface MissingRow {
  hu_code: string;
  batch_code: string;
  bin_code: string;
}

export interface DiscrepancyReport {
  surplus_units: SurplusRow[];
  shortage_by_batch: Record<string, number>;
  missing_units: MissingRow[];
}

export interface ActivityEvent {
  at: number;
  kind: string;
}

export interface IdleGap {
  operator: string;
  gap_start: number;
  gap_seconds: number;
}

export interface ActivityTimeline {
  per_operator: Record<string, ActivityEvent[]>;
  idle_gaps: IdleGap[];
}

export interface ApiError {
  error: string;
  detail: string;
  blocking_batches?: string[];
  unacknowledged_surplus?: string[];
}

export interface QueuedScan {
  event_id: string;
  session_id: string;
  bin_code: string;
  payload: string;
  at: number;
}
