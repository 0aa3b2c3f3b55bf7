/**
 * Dashboard state: the circuit topology joined with live status, plus the
 * per-agent throughput history the sparklines draw from.
 *
 * Pure data transforms live here so they can be tested without a DOM.
 * Reconciliation is last-writer-wins against server truth: an optimistic
 * state set by a button click survives at most until the next refresh
 * that reports the agent.
 */

import type { ApiClient, CircuitDoc, StatusSnapshot } from "./api.js";

export const SPARKLINE_WINDOW = 30;
export const STALE_AFTER_S = 3;

export interface NodeView {
  name: string;
  kind: string;
  state: StatusSnapshot["state"];
  optimistic: boolean;
  stale: boolean;
  inboxDepth: number;
  workingDepth: number;
  processedTotal: number;
  deadletterTotal: number;
  throughput: number;
  history: number[];
}

export interface CircuitView {
  circuitName: string;
  version: number;
  nodes: Map<string, NodeView>;
  edges: Array<{ from: string; to: string }>;
  connected: boolean;
  lastError: string | null;
}

export function emptyView(): CircuitView {
  return {
    circuitName: "",
    version: 0,
    nodes: new Map(),
    edges: [],
    connected: false,
    lastError: null,
  };
}

export function applyCircuit(view: CircuitView, doc: CircuitDoc): void {
  view.circuitName = doc.circuit_name;
  view.version = doc.version;
  view.edges = doc.edges.map((e) => ({ from: e.from, to: e.to }));
  for (const agent of doc.agents) {
    if (!view.nodes.has(agent.name)) {
      view.nodes.set(agent.name, {
        name: agent.name,
        kind: agent.kind,
        state: "stopped",
        optimistic: false,
        stale: false,
        inboxDepth: 0,
        workingDepth: 0,
        processedTotal: 0,
        deadletterTotal: 0,
        throughput: 0,
        history: [],
      });
    }
  }
  for (const name of [...view.nodes.keys()]) {
    if (!doc.agents.some((a) => a.name === name)) {
      view.nodes.delete(name);
    }
  }
}

export function applyStatus(view: CircuitView, snapshots: StatusSnapshot[]): void {
  view.connected = true;
  view.lastError = null;
  for (const snap of snapshots) {
    const node = view.nodes.get(snap.agent);
    if (!node) continue; // circuit refresh will pick it up
    node.state = snap.state;
    node.optimistic = false; // server truth wins
    node.stale =
      snap.state === "running" &&
      snap.heartbeat_age !== null &&
      snap.heartbeat_age > STALE_AFTER_S;
    node.inboxDepth = snap.inbox_depth;
    node.workingDepth = snap.working_depth;
    node.processedTotal = snap.processed_total;
    node.deadletterTotal = snap.deadletter_total;
    node.throughput = snap.throughput_1m;
    node.history.push(snap.throughput_1m);
    if (node.history.length > SPARKLINE_WINDOW) {
      node.history.shift();
    }
  }
}

export function applyConnectionLoss(view: CircuitView, error: string): void {
  view.connected = false;
  view.lastError = error;
}

/** Button click feedback shown until the next refresh reconciles it. */
export function applyOptimistic(
  view: CircuitView,
  agent: string,
  state: StatusSnapshot["state"],
): void {
  const node = view.nodes.get(agent);
  if (node) {
    node.state = state;
    node.optimistic = true;
  }
}

export class Dashboard {
  view: CircuitView = emptyView();

  constructor(private api: ApiClient) {}

  /** One poll tick; safe to call on an interval. */
  async refresh(): Promise<CircuitView> {
    try {
      if (this.view.nodes.size === 0) {
        applyCircuit(this.view, await this.api.getCircuit());
      }
      applyStatus(this.view, await this.api.getStatus());
    } catch (e) {
      applyConnectionLoss(this.view, e instanceof Error ? e.message : String(e));
    }
    return this.view;
  }

  async start(agent: string): Promise<void> {
    await this.api.startAgent(agent);
    applyOptimistic(this.view, agent, "running");
  }

  async stop(agent: string, mode: "graceful" | "kill" = "graceful"): Promise<void> {
    await this.api.stopAgent(agent, mode);
    applyOptimistic(this.view, agent, "stopped");
  }

  async retry(agent: string, doc: string): Promise<void> {
    await this.api.retryDeadLetter(agent, doc);
  }
}
