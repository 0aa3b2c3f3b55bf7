/** Dashboard entry point: 1 s poll loop against the serving origin. */

import { ApiClient } from "./api.js";
import { Dashboard } from "./model.js";
import { renderAgentPanel, renderBanner, renderCircuit, type Actions } from "./render.js";

const REFRESH_MS = 1000;

function boot(): void {
  const api = new ApiClient("");
  const dashboard = new Dashboard(api);
  let selected: string | null = null;

  const svg = document.getElementById("circuit") as unknown as SVGSVGElement;
  const banner = document.getElementById("banner") as HTMLElement;
  const panel = document.getElementById("agent-panel") as HTMLElement;
  const heading = document.getElementById("circuit-name") as HTMLElement;

  const actions: Actions = {
    start: (agent) => dashboard.start(agent).then(redraw),
    stop: (agent, mode) => dashboard.stop(agent, mode).then(redraw),
    retry: (agent, doc) => dashboard.retry(agent, doc),
    loadDeadLetters: (agent) => api.getDeadLetters(agent),
  };

  function redraw(): void {
    const view = dashboard.view;
    heading.textContent = view.circuitName
      ? `${view.circuitName} (v${view.version})`
      : "circuitd";
    renderBanner(banner, view);
    renderCircuit(svg, view, (agent) => {
      selected = agent;
      renderAgentPanel(panel, view, selected, actions);
    });
    renderAgentPanel(panel, view, selected, actions);
  }

  async function tick(): Promise<void> {
    await dashboard.refresh();
    redraw();
  }

  void tick();
  setInterval(() => void tick(), REFRESH_MS);
}

boot();
