"""Query-centric similarity graph and force-directed positioning.

The graph connects records whose description vectors are similar; positions
come from the Fruchterman-Reingold force-directed algorithm, so strongly
similar records agglomerate and dissimilar ones drift apart. Everything here
is pure computation: layouts for different queries can run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ragindex import EmptyIndexError, LEVEL_RECORD, VectorIndex, cosine

QUERY_NODE_ID = "__query__"
NODE_RECORD = "record"
NODE_QUERY = "query"

DEFAULT_EDGE_THRESHOLD = 0.5
DEFAULT_MAX_DEGREE = 10
DEFAULT_ITERATIONS = 300
INITIAL_TEMPERATURE = 0.1


@dataclass
class GraphNode:
    node_id: str
    kind: str  # "record" | "query"


@dataclass
class GraphEdge:
    a: str
    b: str
    weight: float


@dataclass
class SimilarityGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]


@dataclass
class GraphLayout:
    positions: dict[str, tuple[float, float]]
    iterations_run: int
    seed: int


def build_graph(
    index: VectorIndex,
    query_vector: Optional[np.ndarray] = None,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
    max_degree: int = DEFAULT_MAX_DEGREE,
    query_top_k: int = DEFAULT_MAX_DEGREE,
) -> SimilarityGraph:
    """Build the record similarity graph, optionally centred on a query.

    Record-record edges connect pairs with cosine >= ``edge_threshold``; each
    node keeps only its ``max_degree`` strongest candidates (an edge survives
    if either endpoint keeps it). A query vector adds one query node linked to
    its ``query_top_k`` most similar records with the cosine as edge weight;
    non-positive similarities are dropped, keeping weights in (0, 1].
    """
    records = [e for e in index.entries if e.level == LEVEL_RECORD]
    if not records:
        raise EmptyIndexError("no record-level entries to graph")
    nodes = [GraphNode(e.entry_id, NODE_RECORD) for e in records]

    candidate: dict[str, list[tuple[float, str]]] = {e.entry_id: [] for e in records}
    weights: dict[tuple[str, str], float] = {}
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            sim = cosine(records[i].vector, records[j].vector)
            if sim >= edge_threshold:
                a, b = records[i].entry_id, records[j].entry_id
                w = min(1.0, sim)
                weights[(a, b)] = w
                candidate[a].append((w, b))
                candidate[b].append((w, a))

    kept: set[tuple[str, str]] = set()
    for node_id, neighbours in candidate.items():
        neighbours.sort(key=lambda t: (-t[0], t[1]))
        for w, other in neighbours[:max_degree]:
            kept.add((min(node_id, other), max(node_id, other)))
    edges = [GraphEdge(a, b, weights[(a, b)]) for a, b in sorted(kept)]

    if query_vector is not None:
        nodes.append(GraphNode(QUERY_NODE_ID, NODE_QUERY))
        scored = sorted(
            ((cosine(query_vector, e.vector), e.entry_id) for e in records),
            key=lambda t: (-t[0], t[1]),
        )
        for sim, rid in scored[:query_top_k]:
            if sim > 0.0:
                edges.append(GraphEdge(QUERY_NODE_ID, rid, min(1.0, sim)))
    return SimilarityGraph(nodes=nodes, edges=edges)


def fr_positions(
    graph: SimilarityGraph,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> dict[str, tuple[float, float]]:
    """Raw Fruchterman-Reingold positions (before unit-square rescaling).

    Standard formulation over the unit frame (area 1): ideal distance
    k = sqrt(1/n), repulsion k^2/d between all pairs, attraction d^2/k along
    edges scaled linearly by the edge weight, displacement capped by a
    temperature cooled linearly from 0.1 to 0, positions initialized uniformly
    at random from the seed and kept inside the frame. Nodes are processed in
    sorted-id order so the result is invariant under relabeling of the input.
    """
    if not graph.nodes:
        raise ValueError("layout requires at least one node")
    order = sorted(n.node_id for n in graph.nodes)
    idx = {node_id: i for i, node_id in enumerate(order)}
    n = len(order)
    k = float(np.sqrt(1.0 / n))

    rng = np.random.default_rng(seed)
    pos = rng.random((n, 2))

    edges = sorted(graph.edges, key=lambda e: (e.a, e.b))
    edge_idx = np.array([[idx[e.a], idx[e.b]] for e in edges], dtype=int).reshape(-1, 2)
    edge_w = np.array([e.weight for e in edges], dtype=float)

    eps = 1e-12
    for it in range(iterations):
        t = INITIAL_TEMPERATURE * (1.0 - it / iterations)
        delta = pos[:, None, :] - pos[None, :, :]
        dist = np.maximum(np.linalg.norm(delta, axis=2), eps)
        repulse = (k * k) / dist
        np.fill_diagonal(repulse, 0.0)
        disp = (delta / dist[:, :, None] * repulse[:, :, None]).sum(axis=1)

        if len(edge_idx):
            src, dst = edge_idx[:, 0], edge_idx[:, 1]
            d_vec = pos[src] - pos[dst]
            d = np.maximum(np.linalg.norm(d_vec, axis=1), eps)
            pull = (d * d / k) * edge_w
            step = d_vec / d[:, None] * pull[:, None]
            np.subtract.at(disp, src, step)
            np.add.at(disp, dst, step)

        length = np.maximum(np.linalg.norm(disp, axis=1), eps)
        pos = pos + disp / length[:, None] * np.minimum(length, t)[:, None]
        np.clip(pos, 0.0, 1.0, out=pos)

    return {node_id: (float(pos[i, 0]), float(pos[i, 1])) for node_id, i in idx.items()}


def fr_layout(
    graph: SimilarityGraph,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> GraphLayout:
    """Force-directed positions rescaled affinely into the unit square.

    Degenerate axes (single node, or all nodes aligned) collapse to 0.5.
    """
    raw = fr_positions(graph, iterations=iterations, seed=seed)
    order = sorted(raw)
    pos = np.array([raw[node_id] for node_id in order], dtype=float)
    eps = 1e-12
    spans = pos.max(axis=0) - pos.min(axis=0)
    lows = pos.min(axis=0)
    scaled = np.empty_like(pos)
    for axis in range(2):
        if spans[axis] <= eps:
            scaled[:, axis] = 0.5
        else:
            scaled[:, axis] = (pos[:, axis] - lows[axis]) / spans[axis]

    positions = {
        node_id: (float(scaled[i, 0]), float(scaled[i, 1])) for i, node_id in enumerate(order)
    }
    return GraphLayout(positions=positions, iterations_run=iterations, seed=seed)


def layout_to_json(graph: SimilarityGraph, layout: GraphLayout) -> dict:
    """Serialize to the {nodes: [{id, kind, x, y}], edges: [{a, b, w}]} shape
    consumed by the web UI and the SVG export."""
    return {
        "nodes": [
            {
                "id": node.node_id,
                "kind": node.kind,
                "x": layout.positions[node.node_id][0],
                "y": layout.positions[node.node_id][1],
            }
            for node in graph.nodes
        ],
        "edges": [{"a": e.a, "b": e.b, "w": e.weight} for e in graph.edges],
    }
