/**
 * Layered DAG layout for the circuit graph: agents fall into columns by
 * longest path from a source, rows ordered by name for stability.
 */

export interface LayoutNode {
  name: string;
  x: number;
  y: number;
}

export interface LayoutResult {
  nodes: Map<string, LayoutNode>;
  width: number;
  height: number;
  columnOf: Map<string, number>;
}

export const COLUMN_WIDTH = 190;
export const ROW_HEIGHT = 96;
export const MARGIN = 60;

export function layerByLongestPath(
  names: string[],
  edges: Array<{ from: string; to: string }>,
): Map<string, number> {
  const indeg = new Map<string, number>(names.map((n) => [n, 0]));
  const out = new Map<string, string[]>(names.map((n) => [n, []]));
  for (const e of edges) {
    if (!indeg.has(e.from) || !indeg.has(e.to)) continue;
    indeg.set(e.to, (indeg.get(e.to) ?? 0) + 1);
    out.get(e.from)?.push(e.to);
  }
  const depth = new Map<string, number>();
  const queue = names.filter((n) => indeg.get(n) === 0).sort();
  for (const n of queue) depth.set(n, 0);
  while (queue.length > 0) {
    const n = queue.shift()!;
    for (const next of out.get(n) ?? []) {
      depth.set(next, Math.max(depth.get(next) ?? 0, (depth.get(n) ?? 0) + 1));
      indeg.set(next, (indeg.get(next) ?? 1) - 1);
      if (indeg.get(next) === 0) queue.push(next);
    }
  }
  return depth;
}

export function layoutCircuit(
  names: string[],
  edges: Array<{ from: string; to: string }>,
): LayoutResult {
  const depth = layerByLongestPath(names, edges);
  const columns = new Map<number, string[]>();
  for (const name of names) {
    const col = depth.get(name) ?? 0;
    if (!columns.has(col)) columns.set(col, []);
    columns.get(col)!.push(name);
  }
  const nodes = new Map<string, LayoutNode>();
  let maxRows = 1;
  for (const [col, members] of columns) {
    members.sort();
    maxRows = Math.max(maxRows, members.length);
    members.forEach((name, row) => {
      nodes.set(name, {
        name,
        x: MARGIN + col * COLUMN_WIDTH,
        y: MARGIN + row * ROW_HEIGHT,
      });
    });
  }
  const nCols = columns.size === 0 ? 1 : Math.max(...columns.keys()) + 1;
  return {
    nodes,
    width: MARGIN * 2 + (nCols - 1) * COLUMN_WIDTH + 150,
    height: MARGIN * 2 + (maxRows - 1) * ROW_HEIGHT + 60,
    columnOf: depth,
  };
}

/** Points for a polyline sparkline in a w x h box, newest sample last. */
export function sparklinePoints(
  history: number[],
  w: number,
  h: number,
): string {
  if (history.length === 0) return "";
  const peak = Math.max(1, ...history);
  const step = history.length > 1 ? w / (history.length - 1) : 0;
  return history
    .map((v, i) => `${(i * step).toFixed(1)},${(h - (v / peak) * h).toFixed(1)}`)
    .join(" ");
}
