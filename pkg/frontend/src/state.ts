import type { GraphPayload } from "./types.js";

export interface ViewState {
  currentQuery: string;
  selectedNode: string | null;
  graph: GraphPayload | null;
  topResult: string | null;
}

export function initialState(): ViewState {
  return { currentQuery: "", selectedNode: null, graph: null, topResult: null };
}

/** Empty or whitespace-only queries are rejected client-side. */
export function validateQuery(text: string): string | null {
  return text.trim().length === 0 ? "Enter a query first." : null;
}

export function nodeIds(graph: GraphPayload): Set<string> {
  return new Set(graph.nodes.map((n) => n.id));
}

export interface RelatedRecord {
  id: string;
  weight: number;
}

/** Graph neighbours of a node, strongest edge first (query node excluded). */
export function relatedRecords(graph: GraphPayload, nodeId: string): RelatedRecord[] {
  const related: RelatedRecord[] = [];
  for (const edge of graph.edges) {
    const other = edge.a === nodeId ? edge.b : edge.b === nodeId ? edge.a : null;
    if (other === null) continue;
    const kind = graph.nodes.find((n) => n.id === other)?.kind;
    if (kind === "record") related.push({ id: other, weight: edge.w });
  }
  related.sort((p, q) => q.weight - p.weight || (p.id < q.id ? -1 : 1));
  return related;
}

/** Nodes with no edge at all render faded rather than hidden. */
export function isolatedNodeIds(graph: GraphPayload): Set<string> {
  const connected = new Set<string>();
  for (const edge of graph.edges) {
    connected.add(edge.a);
    connected.add(edge.b);
  }
  return new Set(graph.nodes.filter((n) => !connected.has(n.id)).map((n) => n.id));
}

/** Selecting a node requires it to exist in the current graph. */
export function selectNode(state: ViewState, nodeId: string): ViewState {
  if (!state.graph || !nodeIds(state.graph).has(nodeId)) {
    throw new Error(`node ${nodeId} is not in the current graph`);
  }
  return { ...state, selectedNode: nodeId };
}
