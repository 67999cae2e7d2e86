// Wire shapes of the datascout JSON API. The client renders what the server
// sends and never recomputes scores or positions itself.

export interface GraphNode {
  id: string;
  kind: "record" | "query";
  x: number; // unit square
  y: number;
}

export interface GraphEdge {
  a: string;
  b: string;
  w: number; // (0, 1]
}

export interface GraphPayload {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface QueryResult {
  record_id: string;
  score: number;
  title: string;
  snippet: string;
}

export interface QueryResponse {
  query: string;
  results: QueryResult[];
  graph: GraphPayload;
}

export interface FileReport {
  file_id: string;
  description: string;
  domain: string;
  keywords: string[];
}

export interface RecordReportPayload {
  record: { record_id: string; unified_summary: string };
  files: FileReport[];
  title: string;
}
