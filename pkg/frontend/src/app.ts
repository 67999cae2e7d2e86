import { BackendClient, BackendError } from "./api.js";
import {
  initialState,
  relatedRecords,
  selectNode,
  validateQuery,
  type ViewState,
} from "./state.js";
import {
  clearBanner,
  renderGraph,
  renderReportPanel,
  renderUnavailablePanel,
  showBanner,
} from "./render.js";

export interface AppHandles {
  submitQuery(text: string): Promise<void>;
  selectRecord(recordId: string): Promise<void>;
  readonly state: ViewState;
  elements: {
    input: HTMLInputElement;
    button: HTMLButtonElement;
    banner: HTMLElement;
    svg: SVGSVGElement;
    panel: HTMLElement;
    results: HTMLElement;
  };
}

/** Build the UI inside `root` and wire it to the backend. */
export function mountApp(root: HTMLElement, backendBase: string): AppHandles {
  const client = new BackendClient(backendBase);
  let state = initialState();

  root.replaceChildren();
  const form = document.createElement("form");
  form.className = "query-form";
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = "Describe the dataset you are looking for";
  const button = document.createElement("button");
  button.type = "submit";
  button.textContent = "Search";
  form.append(input, button);

  const banner = document.createElement("div");
  banner.className = "banner";
  banner.hidden = true;

  const layoutBox = document.createElement("div");
  layoutBox.className = "columns";
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("class", "graph");
  const side = document.createElement("aside");
  const results = document.createElement("ol");
  results.className = "results";
  const panel = document.createElement("section");
  panel.className = "report-panel";
  side.append(results, panel);
  layoutBox.append(svg, side);

  root.append(form, banner, layoutBox);

  function redrawGraph(): void {
    if (!state.graph) return;
    renderGraph(svg, state.graph, {
      topResult: state.topResult,
      selected: state.selectedNode,
      onNodeClick: (id) => void selectRecord(id),
    });
  }

  async function selectRecord(recordId: string): Promise<void> {
    try {
      state = selectNode(state, recordId);
    } catch {
      return; // node not in the current graph; ignore stale clicks
    }
    redrawGraph();
    try {
      const payload = await client.recordReport(recordId);
      const related = state.graph ? relatedRecords(state.graph, recordId) : [];
      renderReportPanel(panel, payload, related, {
        onSelectRelated: (id) => void selectRecord(id),
      });
    } catch (err) {
      if (err instanceof BackendError && err.status === 404) {
        renderUnavailablePanel(panel, recordId);
      } else {
        showBanner(banner, (err as Error).message);
      }
    }
  }

  function renderResults(items: { record_id: string; score: number; title: string }[]): void {
    results.replaceChildren();
    for (const item of items) {
      const li = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.dataset.recordId = item.record_id;
      link.textContent = `${item.title} — ${item.score.toFixed(3)}`;
      link.addEventListener("click", (ev) => {
        ev.preventDefault();
        void selectRecord(item.record_id);
      });
      li.appendChild(link);
      results.appendChild(li);
    }
  }

  async function submitQuery(text: string): Promise<void> {
    const problem = validateQuery(text);
    if (problem) {
      showBanner(banner, problem);
      return; // no request sent
    }
    clearBanner(banner);
    try {
      const response = await client.query(text);
      state = {
        currentQuery: text,
        selectedNode: null,
        graph: response.graph,
        topResult: response.results[0]?.record_id ?? null,
      };
      renderResults(response.results);
      redrawGraph();
      panel.replaceChildren();
    } catch (err) {
      if ((err as Error).name === "AbortError") return; // superseded
      // keep the previous graph on backend failure
      showBanner(banner, (err as Error).message);
    }
  }

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void submitQuery(input.value);
  });

  return {
    submitQuery,
    selectRecord,
    get state() {
      return state;
    },
    elements: { input, button, banner, svg, panel, results },
  };
}
