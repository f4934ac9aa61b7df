// Thin typed client over the server's JSON endpoints. The transport is
// injectable so tests can run against a scripted fake server; the console
// itself never computes reconciliation numbers, it only relays API fields.

import type {
  ActivityTimeline,
  ApiError,
  BinDetail,
  BinReconciliation,
  DiscrepancyReport,
  ProgressReport,
  QueuedScan,
  ScanResponse,
} from "./types.js";

export type Transport = (
  method: string,
  path: string,
  body?: unknown,
) => Promise<{ status: number; json: unknown }>;

export class ApiRequestFailed extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiError,
  ) {
    super(`${body.error}: ${body.detail}`);
  }
}

// Thrown by the transport (not the server) when the network is down;
// callers queue mutations and retry later.
export class NetworkDown extends Error {}

export function fetchTransport(baseUrl: string, token: string): Transport {
  return async (method, path, body) => {
    let response: Response;
    try {
      response = await fetch(baseUrl + path, {
        method,
        headers: {
          Authorization: `Bearer ${token}`,
          ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
        },
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new NetworkDown(String(err));
    }
    return { status: response.status, json: await response.json() };
  };
}

export class ApiClient {
  constructor(private readonly transport: Transport) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const { status, json } = await this.transport(method, path, body);
    if (status >= 400) {
      throw new ApiRequestFailed(status, json as ApiError);
    }
    return json as T;
  }

  startBin(sessionId: string, binCode: string, at: number) {
    return this.call<object>("POST", `/sessions/${sessionId}/bins/${binCode}/start`, { at });
  }

  submitScan(scan: QueuedScan): Promise<ScanResponse> {
    return this.call<ScanResponse>("POST", "/scans", { ...scan, verbose: true });
  }

  ackSurplus(sessionId: string, binCode: string, huCode: string, at: number) {
    return this.call<object>("POST", `/sessions/${sessionId}/bins/${binCode}/ack-surplus`, {
      hu_code: huCode,
      at,
    });
  }

  signOff(sessionId: string, binCode: string, at: number): Promise<BinReconciliation> {
    return this.call<BinReconciliation>(
      "POST",
      `/sessions/${sessionId}/bins/${binCode}/signoff`,
      { at },
    );
  }

  binDetail(sessionId: string, binCode: string): Promise<BinDetail> {
    return this.call<BinDetail>("GET", `/sessions/${sessionId}/bins/${binCode}`);
  }

  progress(sessionId: string): Promise<ProgressReport> {
    return this.call<ProgressReport>("GET", `/sessions/${sessionId}/progress`);
  }

  discrepancies(sessionId: string): Promise<DiscrepancyReport> {
    return this.call<DiscrepancyReport>("GET", `/sessions/${sessionId}/discrepancies`);
  }

  activity(sessionId: string, idleThreshold?: number): Promise<ActivityTimeline> {
    const query = idleThreshold !== undefined ? `?idle_threshold=${idleThreshold}` : "";
    return this.call<ActivityTimeline>("GET", `/sessions/${sessionId}/activity${query}`);
  }
}
