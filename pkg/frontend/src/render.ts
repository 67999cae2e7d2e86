import { isolatedNodeIds, type RelatedRecord } from "./state.js";
import type { GraphPayload, RecordReportPayload } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface GraphRenderOptions {
  width?: number;
  height?: number;
  topResult?: string | null;
  selected?: string | null;
  onNodeClick?: (nodeId: string) => void;
}

/** Render the server-laid-out graph into an <svg> element.
 *
 * Positions arrive in the unit square and are only scaled to the viewport;
 * edge thickness is proportional to weight; the query node is visually
 * distinct; isolated nodes are faded, never hidden. */
export function renderGraph(
  svg: SVGSVGElement,
  graph: GraphPayload,
  options: GraphRenderOptions = {},
): void {
  const width = options.width ?? 800;
  const height = options.height ?? 600;
  const pad = 24;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  while (svg.firstChild) svg.removeChild(svg.firstChild);

  const sx = (x: number) => pad + x * (width - 2 * pad);
  const sy = (y: number) => pad + y * (height - 2 * pad);
  const positions = new Map(graph.nodes.map((n) => [n.id, { x: sx(n.x), y: sy(n.y) }]));
  const faded = isolatedNodeIds(graph);

  for (const edge of graph.edges) {
    const a = positions.get(edge.a);
    const b = positions.get(edge.b);
    if (!a || !b) continue;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", a.x.toFixed(1));
    line.setAttribute("y1", a.y.toFixed(1));
    line.setAttribute("x2", b.x.toFixed(1));
    line.setAttribute("y2", b.y.toFixed(1));
    line.setAttribute("stroke", "#93a1c4");
    line.setAttribute("stroke-width", (1 + 4 * edge.w).toFixed(2));
    line.setAttribute("class", "edge");
    svg.appendChild(line);
  }

  for (const node of graph.nodes) {
    const pos = positions.get(node.id)!;
    const circle = document.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", pos.x.toFixed(1));
    circle.setAttribute("cy", pos.y.toFixed(1));
    const classes = ["node", node.kind];
    if (node.id === options.topResult) classes.push("top-result");
    if (node.id === options.selected) classes.push("selected");
    if (faded.has(node.id)) classes.push("isolated");
    circle.setAttribute("class", classes.join(" "));
    circle.setAttribute("r", node.kind === "query" ? "12" : "8");
    circle.setAttribute("data-node-id", node.id);
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = node.id;
    circle.appendChild(title);
    if (node.kind === "record" && options.onNodeClick) {
      circle.addEventListener("click", () => options.onNodeClick!(node.id));
    }
    svg.appendChild(circle);

    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", (pos.x + 10).toFixed(1));
    label.setAttribute("y", (pos.y - 10).toFixed(1));
    label.setAttribute("class", `label ${faded.has(node.id) ? "isolated" : ""}`);
    label.textContent = node.kind === "query" ? "query" : node.id;
    svg.appendChild(label);
  }
}

export interface ReportPanelHandlers {
  onSelectRelated?: (recordId: string) => void;
}

/** Fill the side panel with one record's report and its related records. */
export function renderReportPanel(
  panel: HTMLElement,
  payload: RecordReportPayload,
  related: RelatedRecord[],
  handlers: ReportPanelHandlers = {},
): void {
  panel.replaceChildren();

  const heading = document.createElement("h2");
  heading.textContent = payload.title || payload.record.record_id;
  panel.appendChild(heading);

  const description = document.createElement("p");
  description.className = "description";
  description.textContent =
    payload.record.unified_summary || payload.files[0]?.description || "(no description)";
  panel.appendChild(description);

  const first = payload.files[0];
  if (first?.domain) {
    const domain = document.createElement("p");
    domain.className = "domain";
    domain.textContent = `Domain: ${first.domain}`;
    panel.appendChild(domain);
  }
  if (first && first.keywords.length > 0) {
    const keywords = document.createElement("p");
    keywords.className = "keywords";
    keywords.textContent = `Keywords: ${first.keywords.join(", ")}`;
    panel.appendChild(keywords);
  }

  const relatedHeading = document.createElement("h3");
  relatedHeading.textContent = "Related records";
  panel.appendChild(relatedHeading);

  const list = document.createElement("ul");
  list.className = "related";
  if (related.length === 0) {
    const item = document.createElement("li");
    item.className = "none";
    item.textContent = "No related records in this graph.";
    list.appendChild(item);
  }
  for (const entry of related) {
    const item = document.createElement("li");
    const link = document.createElement("a");
    link.href = "#";
    link.dataset.recordId = entry.id;
    link.textContent = `${entry.id} (${entry.weight.toFixed(2)})`;
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      handlers.onSelectRelated?.(entry.id);
    });
    item.appendChild(link);
    list.appendChild(item);
  }
  panel.appendChild(list);
}

export function renderUnavailablePanel(panel: HTMLElement, recordId: string): void {
  panel.replaceChildren();
  const note = document.createElement("p");
  note.className = "unavailable";
  note.textContent = `Report unavailable for ${recordId}.`;
  panel.appendChild(note);
}

export function showBanner(banner: HTMLElement, message: string): void {
  banner.textContent = message;
  banner.hidden = false;
}

export function clearBanner(banner: HTMLElement): void {
  banner.textContent = "";
  banner.hidden = true;
}
