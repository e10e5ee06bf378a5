// Typed HTTP client for the control plane.

import type {
  CurveResponse,
  DatasetSummary,
  InterventionPayload,
  Snapshot,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
    this.status = status;
    this.detail = detail;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    throw new ApiError(resp.status, body && (body as any).detail ? (body as any).detail : body);
  }
  return body as T;
}

export class ConsoleApi {
  constructor(private baseUrl: string) {}

  createExperiment(config: Record<string, unknown>): Promise<{ id: string; status: string }> {
    return request(`${this.baseUrl}/experiments`, {
      method: "POST",
      body: JSON.stringify(config),
    });
  }

  getSnapshot(id: string): Promise<Snapshot> {
    return request(`${this.baseUrl}/experiments/${id}`);
  }

  advance(id: string, n = 1): Promise<{ status: string; measured_count: number }> {
    return request(`${this.baseUrl}/experiments/${id}/steps`, {
      method: "POST",
      body: JSON.stringify({ n }),
    });
  }

  intervene(
    id: string,
    payload: InterventionPayload
  ): Promise<{ status: string; measured_count: number }> {
    return request(`${this.baseUrl}/experiments/${id}/interventions`, {
      method: "POST",
      body: JSON.stringify(payload),
    });
  }

  getCurve(id: string): Promise<CurveResponse> {
    return request(`${this.baseUrl}/experiments/${id}/curve`);
  }

  getDatasetSummary(): Promise<DatasetSummary> {
    return request(`${this.baseUrl}/dataset/summary`);
  }

  getSchema(): Promise<Record<string, unknown>> {
    return request(`${this.baseUrl}/schema`);
  }

  eventsUrl(id: string, after: number): string {
    return `${this.baseUrl}/experiments/${id}/events?after=${after}`;
  }
}
