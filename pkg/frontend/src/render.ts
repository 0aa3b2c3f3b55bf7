/**
 * DOM rendering: the circuit SVG with per-node badges, the agent control
 * buttons, and the dead-letter browser. All state comes from the model;
 * all mutations go through the Dashboard actions.
 */

import type { DeadLetterRecord } from "./api.js";
import type { CircuitView, NodeView } from "./model.js";
import { layoutCircuit, sparklinePoints } from "./layout.js";

const STATE_COLORS: Record<string, string> = {
  running: "#2e9e4f",
  stopped: "#8a8f98",
  failed: "#d64545",
  fenced: "#d69a45",
};

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

export interface Actions {
  start(agent: string): Promise<void>;
  stop(agent: string, mode: "graceful" | "kill"): Promise<void>;
  retry(agent: string, doc: string): Promise<void>;
  loadDeadLetters(agent: string): Promise<DeadLetterRecord[]>;
}

export function renderBanner(container: HTMLElement, view: CircuitView): void {
  container.innerHTML = "";
  if (!view.connected) {
    const banner = el("div", { class: "banner" },
      `control API unreachable${view.lastError ? `: ${view.lastError}` : ""}`);
    container.appendChild(banner);
  }
}

function nodeBox(node: NodeView, x: number, y: number, onSelect: (n: string) => void): SVGElement {
  const group = svgEl("g", { transform: `translate(${x},${y})`, class: "node" });
  const color = STATE_COLORS[node.state] ?? "#8a8f98";
  const rect = svgEl("rect", {
    width: "150", height: "64", rx: "8",
    fill: "#ffffff", stroke: color, "stroke-width": node.stale ? "1" : "2",
    "stroke-dasharray": node.stale || node.optimistic ? "4 3" : "none",
  });
  group.appendChild(rect);
  const title = svgEl("text", { x: "10", y: "18", class: "node-name" });
  title.textContent = node.name;
  group.appendChild(title);
  const badge = svgEl("circle", { cx: "138", cy: "14", r: "5", fill: color });
  group.appendChild(badge);
  const kind = svgEl("text", { x: "10", y: "33", class: "node-kind" });
  kind.textContent = node.kind;
  group.appendChild(kind);
  const depths = svgEl("text", { x: "10", y: "52", class: "node-depths" });
  depths.textContent =
    `in ${node.inboxDepth}  wk ${node.workingDepth}  done ${node.processedTotal}` +
    (node.deadletterTotal > 0 ? `  dead ${node.deadletterTotal}` : "");
  group.appendChild(depths);
  if (node.history.length > 1) {
    const spark = svgEl("polyline", {
      points: sparklinePoints(node.history, 42, 12),
      transform: "translate(100,42)",
      fill: "none", stroke: color, "stroke-width": "1",
    });
    group.appendChild(spark);
  }
  group.addEventListener("click", () => onSelect(node.name));
  return group;
}

export function renderCircuit(
  svg: SVGSVGElement,
  view: CircuitView,
  onSelect: (agent: string) => void,
): void {
  svg.innerHTML = "";
  const names = [...view.nodes.keys()];
  const layout = layoutCircuit(names, view.edges);
  svg.setAttribute("width", String(layout.width));
  svg.setAttribute("height", String(layout.height));

  for (const edge of view.edges) {
    const a = layout.nodes.get(edge.from);
    const b = layout.nodes.get(edge.to);
    if (!a || !b) continue;
    svg.appendChild(svgEl("line", {
      x1: String(a.x + 150), y1: String(a.y + 32),
      x2: String(b.x), y2: String(b.y + 32),
      stroke: "#b9bec7", "stroke-width": "1.5",
      "marker-end": "url(#arrow)",
    }));
  }
  const defs = svgEl("defs");
  const marker = svgEl("marker", {
    id: "arrow", viewBox: "0 0 10 10", refX: "9", refY: "5",
    markerWidth: "7", markerHeight: "7", orient: "auto-start-reverse",
  });
  marker.appendChild(svgEl("path", { d: "M 0 0 L 10 5 L 0 10 z", fill: "#b9bec7" }));
  defs.appendChild(marker);
  svg.appendChild(defs);

  for (const node of view.nodes.values()) {
    const pos = layout.nodes.get(node.name);
    if (pos) svg.appendChild(nodeBox(node, pos.x, pos.y, onSelect));
  }
}

export function renderAgentPanel(
  panel: HTMLElement,
  view: CircuitView,
  selected: string | null,
  actions: Actions,
): void {
  panel.innerHTML = "";
  if (!selected || !view.nodes.has(selected)) {
    panel.appendChild(el("p", { class: "muted" }, "Select an agent in the circuit."));
    return;
  }
  const node = view.nodes.get(selected)!;
  panel.appendChild(el("h2", {}, `${node.name} (${node.kind})`));
  const stateLine = el("p", {}, `state: ${node.state}${node.optimistic ? " (pending)" : ""}` +
    (node.stale ? " — heartbeat stale" : ""));
  panel.appendChild(stateLine);

  const controls = el("div", { class: "controls" });
  const startBtn = el("button", {}, "start");
  startBtn.addEventListener("click", () => {
    void actions.start(node.name).catch((e) => toast(String(e)));
  });
  const stopBtn = el("button", {}, "stop");
  stopBtn.addEventListener("click", () => {
    void actions.stop(node.name, "graceful").catch((e) => toast(String(e)));
  });
  const killBtn = el("button", { class: "danger" }, "stop --kill");
  killBtn.addEventListener("click", () => {
    void actions.stop(node.name, "kill").catch((e) => toast(String(e)));
  });
  controls.append(startBtn, stopBtn, killBtn);
  panel.appendChild(controls);

  const dlSection = el("div", { class: "deadletters" });
  dlSection.appendChild(el("h3", {}, "dead letters"));
  panel.appendChild(dlSection);
  void actions.loadDeadLetters(node.name).then((letters) => {
    renderDeadLetters(dlSection, node.name, letters, actions);
  }).catch((e) => {
    dlSection.appendChild(el("p", { class: "muted" }, `unavailable: ${e}`));
  });
}

export function renderDeadLetters(
  section: HTMLElement,
  agent: string,
  letters: DeadLetterRecord[],
  actions: Actions,
): void {
  for (const old of section.querySelectorAll("table, p.empty")) old.remove();
  if (letters.length === 0) {
    section.appendChild(el("p", { class: "empty muted" }, "none: the flow is clean"));
    return;
  }
  const table = el("table");
  const head = el("tr");
  for (const col of ["doc", "attempts", "last error", "inputs", ""]) {
    head.appendChild(el("th", {}, col));
  }
  table.appendChild(head);
  for (const dl of letters) {
    const row = el("tr");
    row.appendChild(el("td", { class: "mono" }, dl.doc));
    row.appendChild(el("td", {}, String(dl.attempts)));
    row.appendChild(el("td", { class: "mono error" }, dl.last_error.slice(0, 160)));
    row.appendChild(el("td", { class: "mono" },
      dl.inputs_snapshot.map(([a, f]) => `${a}.${f}`).join(", ")));
    const cell = el("td");
    const retryBtn = el("button", {}, "retry");
    retryBtn.addEventListener("click", () => {
      void actions.retry(agent, dl.doc)
        .then(() => row.remove())
        .catch((e) => toast(String(e)));
    });
    cell.appendChild(retryBtn);
    row.appendChild(cell);
    table.appendChild(row);
  }
  section.appendChild(table);
}

export function toast(message: string): void {
  const box = document.getElementById("toast");
  if (!box) return;
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 4000);
}
