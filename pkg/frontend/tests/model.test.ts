import { describe, expect, it } from "vitest";

import { ApiClient, type StatusSnapshot } from "../src/api.js";
import {
  Dashboard,
  SPARKLINE_WINDOW,
  applyCircuit,
  applyConnectionLoss,
  applyOptimistic,
  applyStatus,
  emptyView,
} from "../src/model.js";

const CIRCUIT = {
  circuit_name: "four",
  version: 1,
  agents: [
    { name: "root", kind: "ingest-root" },
    { name: "work", kind: "adapter" },
  ],
  edges: [{ from: "root", to: "work" }],
  roots: ["root"],
};

function snap(overrides: Partial<StatusSnapshot> = {}): StatusSnapshot {
  return {
    agent: "work",
    kind: "adapter",
    state: "running",
    pid: 123,
    inbox_depth: 4,
    working_depth: 1,
    processed_total: 20,
    deadletter_total: 0,
    last_doc: "d1",
    throughput_1m: 12,
    heartbeat_age: 0.5,
    ...overrides,
  };
}

describe("view construction", () => {
  it("builds nodes from the circuit and removes vanished ones", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    expect([...view.nodes.keys()].sort()).toEqual(["root", "work"]);
    applyCircuit(view, { ...CIRCUIT, agents: [{ name: "root", kind: "ingest-root" }] });
    expect([...view.nodes.keys()]).toEqual(["root"]);
  });

  it("status snapshots land on the matching node", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    applyStatus(view, [snap()]);
    const node = view.nodes.get("work")!;
    expect(node.state).toBe("running");
    expect(node.inboxDepth).toBe(4);
    expect(node.workingDepth).toBe(1);
    expect(node.throughput).toBe(12);
    expect(view.connected).toBe(true);
  });

  it("stale heartbeat flags the node", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    applyStatus(view, [snap({ heartbeat_age: 5.0 })]);
    expect(view.nodes.get("work")!.stale).toBe(true);
    applyStatus(view, [snap({ heartbeat_age: 0.2 })]);
    expect(view.nodes.get("work")!.stale).toBe(false);
  });

  it("sparkline history is windowed", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    for (let i = 0; i < SPARKLINE_WINDOW + 10; i++) {
      applyStatus(view, [snap({ throughput_1m: i })]);
    }
    const history = view.nodes.get("work")!.history;
    expect(history.length).toBe(SPARKLINE_WINDOW);
    expect(history[history.length - 1]).toBe(SPARKLINE_WINDOW + 9);
  });
});

describe("reconciliation", () => {
  it("optimistic state survives until the next refresh, then server wins", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    applyStatus(view, [snap({ state: "stopped" })]);
    applyOptimistic(view, "work", "running");
    expect(view.nodes.get("work")!.state).toBe("running");
    expect(view.nodes.get("work")!.optimistic).toBe(true);
    applyStatus(view, [snap({ state: "stopped" })]);
    expect(view.nodes.get("work")!.state).toBe("stopped");
    expect(view.nodes.get("work")!.optimistic).toBe(false);
  });

  it("connection loss raises the banner and recovery clears it", () => {
    const view = emptyView();
    applyCircuit(view, CIRCUIT);
    applyConnectionLoss(view, "ECONNREFUSED");
    expect(view.connected).toBe(false);
    expect(view.lastError).toContain("ECONNREFUSED");
    applyStatus(view, [snap()]);
    expect(view.connected).toBe(true);
    expect(view.lastError).toBeNull();
  });
});

function mockedFetch(routes: Record<string, unknown>) {
  const calls: Array<{ url: string; method: string }> = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, method: init?.method ?? "GET" });
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    if (path in routes) {
      return new Response(JSON.stringify(routes[path]), { status: 200 });
    }
    return new Response(JSON.stringify({ error: `no route ${path}` }), { status: 404 });
  };
  return { calls, fetchFn };
}

describe("dashboard actions over the documented endpoints", () => {
  it("refresh fetches /circuit once then /status each tick", async () => {
    const { calls, fetchFn } = mockedFetch({
      "/circuit": CIRCUIT,
      "/status": [snap()],
    });
    const dash = new Dashboard(new ApiClient("http://x", fetchFn));
    await dash.refresh();
    await dash.refresh();
    const paths = calls.map((c) => c.url.replace("http://x", ""));
    expect(paths).toEqual(["/circuit", "/status", "/status"]);
  });

  it("start/stop/retry post to the documented endpoints only", async () => {
    const { calls, fetchFn } = mockedFetch({
      "/circuit": CIRCUIT,
      "/status": [snap()],
      "/agents/work/start": { agent: "work", pid: 1 },
      "/agents/work/stop?mode=graceful": { agent: "work", stopped: true },
      "/agents/work/stop?mode=kill": { agent: "work", stopped: true },
      "/agents/work/deadletter/d9/retry": { retried: true },
    });
    const dash = new Dashboard(new ApiClient("http://x", fetchFn));
    await dash.refresh();
    await dash.start("work");
    expect(dash.view.nodes.get("work")!.state).toBe("running");
    await dash.stop("work");
    await dash.stop("work", "kill");
    await dash.retry("work", "d9");
    const documented = [
      /^\/status$/, /^\/circuit$/,
      /^\/agents\/[^/]+$/,
      /^\/agents\/[^/]+\/start$/,
      /^\/agents\/[^/]+\/stop\?mode=(graceful|kill)$/,
      /^\/agents\/[^/]+\/deadletter$/,
      /^\/agents\/[^/]+\/deadletter\/[^/]+\/retry$/,
      /^\/ingest\?root=[^/]+$/,
      /^\/agents\/[^/]+\/knowledge\/[^/]+\/[^/]+$/,
    ];
    for (const call of calls) {
      const path = call.url.replace("http://x", "");
      expect(documented.some((re) => re.test(path)), `undocumented: ${path}`).toBe(true);
    }
  });

  it("failed mutation surfaces an error", async () => {
    const { fetchFn } = mockedFetch({ "/circuit": CIRCUIT, "/status": [] });
    const dash = new Dashboard(new ApiClient("http://x", fetchFn));
    await expect(dash.start("ghost")).rejects.toThrow(/no route/);
  });
});
