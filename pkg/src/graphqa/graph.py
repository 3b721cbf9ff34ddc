"""Reasoning-graph construction.

A KB subgraph is rewritten into the graph the reasoner runs on:

  1. each triple's relation edge becomes a relation *node* sitting between
     subject and object (``levi_transform``), so relations can carry state;
  2. every edge gains its reverse (``add_reverse_edges``);
  3. nodes are layered by BFS hop distance from the seed entities
     (``compute_hop_distances``); unreachable nodes are dropped;
  4. edges pointing back toward the seeds are removed
     (``prune_inside_edges``), keeping only outward or same-layer edges.

``build_reasoning_graph`` composes the stages and honors the ablation
switches (no relation nodes, no direction pruning).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import GraphError
from .kb import Subgraph

ENTITY = "entity"
RELATION = "relation"


@dataclass(frozen=True)
class GraphNode:
    kind: str      # ENTITY or RELATION
    ref: int       # entity id; for relation nodes the triple index
                   # (instance mode) or relation id (type mode)
    surface: str


@dataclass(frozen=True)
class ReasoningGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int], ...]
    seeds: frozenset[int]                 # node indices
    entity_node: dict[int, int]           # entity id -> node index
    hops: tuple[int, ...] | None = None   # per-node distance, once computed
    dropped_unreachable: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class GraphOptions:
    relation_node_mode: str = "instance"   # "instance" or "type"
    use_relation_nodes: bool = True
    use_direction: bool = True
    norm_policy: str = "indegree"          # "indegree" or "constant"
    norm_constant: float = 1.0

    def __post_init__(self):
        if self.relation_node_mode not in ("instance", "type"):
            raise GraphError(
                f"unknown relation node mode {self.relation_node_mode!r}")
        if self.norm_policy not in ("indegree", "constant"):
            raise GraphError(f"unknown norm policy {self.norm_policy!r}")
        if self.norm_policy == "constant" and not self.norm_constant > 0:
            raise GraphError("norm constant must be positive")


def _entity_scaffold(sub: Subgraph) -> tuple[list[GraphNode], dict[int, int],
                                             frozenset[int]]:
    nodes = []
    entity_node = {}
    for eid in sorted(sub.entity_nodes):
        entity_node[eid] = len(nodes)
        nodes.append(GraphNode(ENTITY, eid, sub.kb.entities[eid]))
    seeds = frozenset(entity_node[s] for s in sub.seeds)
    return nodes, entity_node, seeds


def levi_transform(sub: Subgraph, mode: str = "instance") -> ReasoningGraph:
    """Insert a relation node on every triple edge.

    ``instance`` mode creates one relation node per triple; ``type`` mode
    shares one node per distinct relation in the subgraph. Edges run
    subject -> relation node -> object.
    """
    if mode not in ("instance", "type"):
        raise GraphError(f"unknown relation node mode {mode!r}")
    nodes, entity_node, seeds = _entity_scaffold(sub)
    edges: list[tuple[int, int]] = []
    edge_seen: set[tuple[int, int]] = set()

    def add_edge(u: int, v: int) -> None:
        if (u, v) not in edge_seen:
            edge_seen.add((u, v))
            edges.append((u, v))

    if mode == "instance":
        for t_idx, t in enumerate(sub.triples):
            rnode = len(nodes)
            nodes.append(GraphNode(RELATION, t_idx,
                                   sub.kb.relations[t.relation]))
            add_edge(entity_node[t.subject], rnode)
            add_edge(rnode, entity_node[t.obj])
    else:
        rel_node: dict[int, int] = {}
        for t in sub.triples:
            if t.relation not in rel_node:
                rel_node[t.relation] = len(nodes)
                nodes.append(GraphNode(RELATION, t.relation,
                                       sub.kb.relations[t.relation]))
            rnode = rel_node[t.relation]
            add_edge(entity_node[t.subject], rnode)
            add_edge(rnode, entity_node[t.obj])
    return ReasoningGraph(nodes=tuple(nodes), edges=tuple(edges),
                          seeds=seeds, entity_node=entity_node)


def entity_only_graph(sub: Subgraph) -> ReasoningGraph:
    """Entity nodes joined by direct edges; used by the no-relation-node
    ablation."""
    nodes, entity_node, seeds = _entity_scaffold(sub)
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for t in sub.triples:
        e = (entity_node[t.subject], entity_node[t.obj])
        if e not in seen:
            seen.add(e)
            edges.append(e)
    return ReasoningGraph(nodes=tuple(nodes), edges=tuple(edges),
                          seeds=seeds, entity_node=entity_node)


def add_reverse_edges(g: ReasoningGraph) -> ReasoningGraph:
    """Make the edge set symmetric (idempotent)."""
    seen = set(g.edges)
    edges = list(g.edges)
    for u, v in g.edges:
        if (v, u) not in seen:
            seen.add((v, u))
            edges.append((v, u))
    return replace(g, edges=tuple(edges))


def compute_hop_distances(g: ReasoningGraph) -> ReasoningGraph:
    """Layer nodes by BFS distance from the seeds.

    Expects a symmetric graph. Nodes unreachable from every seed are
    removed; the count of removed nodes is recorded on the result.
    """
    if not g.seeds:
        raise GraphError("cannot compute hop distances without seeds")
    n = g.n_nodes
    succs: list[list[int]] = [[] for _ in range(n)]
    for u, v in g.edges:
        succs[u].append(v)
    dist = [-1] * n
    queue: deque[int] = deque()
    for s in sorted(g.seeds):
        dist[s] = 0
        queue.append(s)
    while queue:
        u = queue.popleft()
        for v in succs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    keep = [i for i in range(n) if dist[i] >= 0]
    if len(keep) == n:
        return replace(g, hops=tuple(dist), dropped_unreachable=0)
    remap = {old: new for new, old in enumerate(keep)}
    nodes = tuple(g.nodes[i] for i in keep)
    edges = tuple((remap[u], remap[v]) for u, v in g.edges
                  if u in remap and v in remap)
    seeds = frozenset(remap[s] for s in g.seeds)
    entity_node = {eid: remap[idx] for eid, idx in g.entity_node.items()
                   if idx in remap}
    hops = tuple(dist[i] for i in keep)
    return ReasoningGraph(nodes=nodes, edges=edges, seeds=seeds,
                          entity_node=entity_node, hops=hops,
                          dropped_unreachable=n - len(keep))


def prune_inside_edges(g: ReasoningGraph) -> ReasoningGraph:
    """Drop edges that point strictly back toward the seeds.

    An edge (u, v) survives iff hop(v) >= hop(u), so same-layer edges are
    kept in both directions and all other edges flow outward.
    """
    if g.hops is None:
        raise GraphError("prune requires hop distances; layer the graph first")
    edges = tuple((u, v) for u, v in g.edges if g.hops[v] >= g.hops[u])
    return replace(g, edges=edges)


@dataclass
class AdjacencyView:
    """Predecessor lists with per-node normalization constants.

    ``norm[v]`` divides the message sum into node v; under the in-degree
    policy it is max(1, in-degree(v)). ``src_index``/``dst_index`` are the
    edge list in array form for vectorized aggregation.
    """
    predecessors: list[list[int]]
    norm: np.ndarray
    src_index: np.ndarray
    dst_index: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.predecessors)


def build_adjacency(g: ReasoningGraph,
                    norm_policy: str = "indegree",
                    norm_constant: float = 1.0) -> AdjacencyView:
    preds: list[list[int]] = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        preds[v].append(u)
    if norm_policy == "indegree":
        norm = np.array([max(1, len(p)) for p in preds], dtype=np.float64)
    elif norm_policy == "constant":
        if not norm_constant > 0:
            raise GraphError("norm constant must be positive")
        norm = np.full(g.n_nodes, float(norm_constant))
    else:
        raise GraphError(f"unknown norm policy {norm_policy!r}")
    if g.edges:
        src = np.array([u for u, _ in g.edges], dtype=np.intp)
        dst = np.array([v for _, v in g.edges], dtype=np.intp)
    else:
        src = np.zeros(0, dtype=np.intp)
        dst = np.zeros(0, dtype=np.intp)
    return AdjacencyView(predecessors=preds, norm=norm,
                         src_index=src, dst_index=dst)


def build_reasoning_graph(sub: Subgraph,
                          options: GraphOptions = GraphOptions()
                          ) -> tuple[ReasoningGraph, AdjacencyView]:
    """Run the full construction pipeline under the given options."""
    if options.use_relation_nodes:
        base = levi_transform(sub, options.relation_node_mode)
    else:
        base = entity_only_graph(sub)
    g = compute_hop_distances(add_reverse_edges(base))
    if options.use_direction:
        g = prune_inside_edges(g)
    adj = build_adjacency(g, options.norm_policy, options.norm_constant)
    return g, adj


def graph_to_json(g: ReasoningGraph) -> dict:
    return {
        "nodes": [{"idx": i, "kind": node.kind, "surface": node.surface,
                   "hop": None if g.hops is None else g.hops[i]}
                  for i, node in enumerate(g.nodes)],
        "edges": [[u, v] for u, v in g.edges],
        "seeds": sorted(g.seeds),
    }


def graph_to_dot(g: ReasoningGraph, name: str = "reasoning_graph") -> str:
    lines = [f"digraph {name} {{"]
    for i, node in enumerate(g.nodes):
        shape = "ellipse" if node.kind == ENTITY else "box"
        hop = "?" if g.hops is None else g.hops[i]
        style = ', style=bold' if i in g.seeds else ""
        label = node.surface.replace('"', r'\"')
        lines.append(f'  n{i} [shape={shape}{style}, '
                     f'label="{label}\\nhop {hop}"];')
    for u, v in g.edges:
        lines.append(f"  n{u} -> n{v};")
    lines.append("}")
    return "\n".join(lines)
