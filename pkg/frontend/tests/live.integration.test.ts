/**
 * Dashboard reconciliation against a live deployment.
 *
 * Spawns the real control plane (deploy + serve) in a scratch directory,
 * then drives the dashboard model through start / stop / kill / retry
 * and asserts that node states and depths match GET /status within two
 * refresh intervals, and that every mutation the dashboard put on the
 * wire is a documented endpoint.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { type ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ApiClient, type FetchLike, type StatusSnapshot } from "../src/api.js";
import { Dashboard } from "../src/model.js";

const PYTHON = process.env.CIRCUITD_PYTHON ?? "python3";

const CIRCUIT = {
  circuit_name: "dash-live",
  agents: [
    { name: "root", kind: "ingest-root", poll_interval_ms: 50 },
    {
      name: "work",
      kind: "adapter",
      poll_interval_ms: 50,
      component: {
        argv_template: ["/bin/cp", "{in:root.raw.v1}", "{out}"],
        timeout_ms: 10000,
        output_format: "out.v1",
      },
    },
    {
      name: "shaky",
      kind: "adapter",
      poll_interval_ms: 50,
      failure_threshold: 2,
      component: {
        argv_template: ["/bin/sh", "-c", "exit 1", "{out}"],
        timeout_ms: 10000,
        output_format: "never.v1",
      },
    },
  ],
  edges: [
    { from: "root", to: "work" },
    { from: "root", to: "shaky" },
  ],
  roots: ["root"],
};

let workdir: string;
let server: ChildProcess;
let base: string;
const wire: Array<{ path: string; method: string }> = [];

const recordingFetch: FetchLike = (url, init) => {
  wire.push({
    path: url.replace(/^https?:\/\/[^/]+/, ""),
    method: init?.method ?? "GET",
  });
  return fetch(url, init);
};

async function rawStatus(): Promise<StatusSnapshot[]> {
  const resp = await fetch(`${base}/status`);
  return (await resp.json()) as StatusSnapshot[];
}

async function waitFor(
  predicate: () => Promise<boolean>,
  timeoutMs = 30_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await predicate()) return;
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error("condition not met in time");
}

/** Two refresh intervals: tick the model twice, then compare to truth. */
async function refreshTwiceAndCompare(dash: Dashboard): Promise<void> {
  await dash.refresh();
  await dash.refresh();
  const truth = await rawStatus();
  for (const snap of truth) {
    const node = dash.view.nodes.get(snap.agent);
    expect(node, `node ${snap.agent}`).toBeDefined();
    expect(node!.state, `${snap.agent} state`).toBe(snap.state);
    expect(node!.inboxDepth, `${snap.agent} inbox`).toBe(snap.inbox_depth);
    expect(node!.workingDepth, `${snap.agent} working`).toBe(snap.working_depth);
    expect(node!.deadletterTotal, `${snap.agent} dead`).toBe(snap.deadletter_total);
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "dash-live-"));
  const specPath = join(workdir, "circuit.json.in");
  writeFileSync(specPath, JSON.stringify(CIRCUIT));
  const env = {
    ...process.env,
    CIRCUITD_ROOT: join(workdir, "deploy"),
    CIRCUITD_HEARTBEAT_S: "0.2",
    CIRCUITD_GRACE_S: "1.0",
  };
  execFileSync(PYTHON, ["-m", "circuitd.cli", "deploy", specPath], { env });
  const port = 18000 + Math.floor(Math.random() * 20000);
  base = `http://127.0.0.1:${port}`;
  server = spawn(
    PYTHON,
    ["-m", "circuitd.cli", "serve", "--bind", `127.0.0.1:${port}`],
    { env, stdio: "ignore" },
  );
  await waitFor(async () => {
    try {
      await rawStatus();
      return true;
    } catch {
      return false;
    }
  });
});

afterAll(() => {
  try {
    execFileSync("pkill", ["-9", "-f", `circuitd.agent_main ${join(workdir, "deploy")}`]);
  } catch {
    // nothing left to kill
  }
  server?.kill("SIGKILL");
  rmSync(workdir, { recursive: true, force: true });
});

describe("live reconciliation", () => {
  it("start: node goes running within two refreshes", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    await dash.refresh();
    expect(dash.view.nodes.get("work")!.state).toBe("stopped");

    await dash.start("work");
    expect(dash.view.nodes.get("work")!.state).toBe("running"); // optimistic
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "work" && s.state === "running"));
    await refreshTwiceAndCompare(dash);
    expect(dash.view.nodes.get("work")!.optimistic).toBe(false);
  });

  it("double start converges to one running instance, no error surfaced", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    await dash.refresh();
    await dash.start("work");
    await dash.start("work"); // idempotent from the operator's view
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "work" && s.state === "running"));
    await refreshTwiceAndCompare(dash);
  });

  it("ingested documents show up in depths and drain", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    for (let i = 0; i < 5; i++) {
      const resp = await fetch(`${base}/ingest?root=root`, {
        method: "POST",
        body: `doc ${i}`,
      });
      expect(resp.ok).toBe(true);
    }
    await refreshTwiceAndCompare(dash);
    await waitFor(async () => {
      const truth = await rawStatus();
      const work = truth.find((s) => s.agent === "work")!;
      return work.inbox_depth === 0 && work.processed_total >= 5;
    });
    await refreshTwiceAndCompare(dash);
  });

  it("graceful stop reconciles to stopped", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    await dash.refresh();
    await dash.stop("work", "graceful");
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "work" && s.state === "stopped"));
    await refreshTwiceAndCompare(dash);
  });

  it("kill stop reconciles and leaves depths truthful", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    await dash.refresh();
    await dash.start("work");
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "work" && s.state === "running"));
    await dash.stop("work", "kill");
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "work" && s.state === "stopped"));
    await refreshTwiceAndCompare(dash);
  });

  it("dead letter appears in the browser and retry requeues the doc", async () => {
    const dash = new Dashboard(new ApiClient(base, recordingFetch));
    const api = new ApiClient(base, recordingFetch);
    await dash.refresh();
    await dash.start("shaky");
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "shaky" && s.state === "running"));

    const resp = await fetch(`${base}/ingest?root=root`, {
      method: "POST",
      body: "will fail",
    });
    expect(resp.ok).toBe(true);
    await waitFor(async () =>
      (await rawStatus()).some((s) => s.agent === "shaky" && s.deadletter_total === 1));
    await refreshTwiceAndCompare(dash);

    const letters = await api.getDeadLetters("shaky");
    expect(letters.length).toBe(1);
    expect(letters[0].attempts).toBe(2);
    expect(letters[0].last_error).toContain("NonZeroExit");

    await dash.retry("shaky", letters[0].doc);
    await waitFor(async () => (await api.getDeadLetters("shaky")).length === 0);
    // the doc is back in the flow (it will fail again, but it is requeued)
    await refreshTwiceAndCompare(dash);
    await dash.stop("shaky", "graceful");
  });

  it("every dashboard mutation on the wire is a documented endpoint", () => {
    const documented = [
      /^\/status$/, /^\/circuit$/,
      /^\/agents\/[^/]+\/start$/,
      /^\/agents\/[^/]+\/stop\?mode=(graceful|kill)$/,
      /^\/agents\/[^/]+\/deadletter$/,
      /^\/agents\/[^/]+\/deadletter\/[^/]+\/retry$/,
    ];
    expect(wire.length).toBeGreaterThan(10);
    for (const call of wire) {
      expect(
        documented.some((re) => re.test(call.path)),
        `undocumented request: ${call.method} ${call.path}`,
      ).toBe(true);
    }
    for (const call of wire) {
      if (call.method === "POST") {
        expect(call.path).not.toMatch(/^\/(status|circuit)/);
      }
    }
  });
});
