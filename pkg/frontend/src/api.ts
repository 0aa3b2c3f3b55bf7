/**
 * Typed client over the circuitd control API.
 *
 * Every dashboard mutation goes through here and nowhere else, so tests
 * can record the wire traffic and assert only documented endpoints are
 * ever touched.
 */

export interface StatusSnapshot {
  agent: string;
  kind: string;
  state: "stopped" | "running" | "fenced" | "failed";
  pid: number | null;
  inbox_depth: number;
  working_depth: number;
  processed_total: number;
  deadletter_total: number;
  last_doc: string | null;
  throughput_1m: number;
  heartbeat_age: number | null;
}

export interface CircuitEdge {
  from: string;
  to: string;
}

export interface CircuitDoc {
  circuit_name: string;
  version: number;
  agents: Array<{ name: string; kind: string }>;
  edges: CircuitEdge[];
  roots: string[];
}

export interface DeadLetterRecord {
  doc: string;
  attempts: number;
  last_error: string;
  inputs_snapshot: Array<[string, string]>;
  failed_at: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`);
    if (!resp.ok) {
      throw new Error(`GET ${path} -> ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  private async post(path: string): Promise<void> {
    const resp = await this.fetchFn(`${this.base}${path}`, { method: "POST" });
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const body = (await resp.json()) as { error?: string };
        if (body.error) detail = body.error;
      } catch {
        // non-JSON error body; status code is all we have
      }
      throw new Error(`POST ${path} failed: ${detail}`);
    }
  }

  getStatus(): Promise<StatusSnapshot[]> {
    return this.getJson("/status");
  }

  getCircuit(): Promise<CircuitDoc> {
    return this.getJson("/circuit");
  }

  getDeadLetters(agent: string): Promise<DeadLetterRecord[]> {
    return this.getJson(`/agents/${encodeURIComponent(agent)}/deadletter`);
  }

  startAgent(agent: string): Promise<void> {
    return this.post(`/agents/${encodeURIComponent(agent)}/start`);
  }

  stopAgent(agent: string, mode: "graceful" | "kill" = "graceful"): Promise<void> {
    return this.post(`/agents/${encodeURIComponent(agent)}/stop?mode=${mode}`);
  }

  retryDeadLetter(agent: string, doc: string): Promise<void> {
    return this.post(
      `/agents/${encodeURIComponent(agent)}/deadletter/${encodeURIComponent(doc)}/retry`,
    );
  }
}
