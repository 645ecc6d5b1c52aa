"""Topology analysis over a frozen cognitive map.

Strongly connected components (cognitive vortexes), blue-node failure
attractors, the success-count skeleton, red edges and graph exports.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Hashable, Iterable, Union

import networkx as nx

from .cogmap import CognitiveMap, CognitiveState, TransitionEdge

EXPORT_FORMATS = ("dot", "graphml", "json")


class UnknownFormatError(ValueError):
    pass


@dataclass
class Subgraph:
    states: list[CognitiveState]
    edges: list[TransitionEdge]


Graph = Union[CognitiveMap, Subgraph]


@dataclass
class TopologyReport:
    state_count: int
    edge_count: int
    scc_count: int
    largest_scc_size: int
    nontrivial_sccs: list[list[int]]
    blue_nodes: list[int]
    red_edges: list[tuple[int, int]]
    skeleton_node_count: int
    skeleton_edge_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["red_edges"] = [list(e) for e in self.red_edges]
        return d


def _parts(g: Graph) -> tuple[list[CognitiveState], list[TransitionEdge]]:
    if isinstance(g, CognitiveMap):
        return list(g.states), list(g.edges.values())
    return list(g.states), list(g.edges)


def tarjan(nodes: Iterable[Hashable], successors: Callable[[Hashable], Iterable[Hashable]]) -> list[set]:
    """Iterative Tarjan SCC. Components come out in reverse topological order."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    result: list[set] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work = [(root, iter(successors(root)))]
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == v:
                        break
                result.append(comp)
    return result


def find_sccs(g: Graph) -> list[set[int]]:
    states, edges = _parts(g)
    adj: dict[int, list[int]] = {s.id: [] for s in states}
    for e in edges:
        adj[e.source].append(e.target)
    return tarjan(sorted(adj), adj.__getitem__)


def lower_median(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def blue_nodes(g: Graph, trust_threshold: float = 0.5) -> set[int]:
    """Low-trust states visited strictly more often than the (lower) median."""
    states, _ = _parts(g)
    if not states:
        return set()
    med = lower_median([s.visit_count for s in states])
    return {s.id for s in states if s.trust < trust_threshold and s.visit_count > med}


def skeleton(g: Graph, min_success: int = 2) -> Subgraph:
    if min_success < 1:
        raise ValueError("min_success must be >= 1")
    states, edges = _parts(g)
    kept = [e for e in edges if e.success_count >= min_success]
    ids = {e.source for e in kept} | {e.target for e in kept}
    return Subgraph([s for s in states if s.id in ids], kept)


def red_edges(g: Graph, k: int = 20) -> list[tuple[int, int]]:
    _, edges = _parts(g)
    ranked = sorted(edges, key=lambda e: (-e.success_count, e.source, e.target))
    return [e.key for e in ranked[:k]]


def analyze(g: Graph, red_k: int = 20, min_success: int = 2) -> TopologyReport:
    states, edges = _parts(g)
    sccs = find_sccs(g)
    sk = skeleton(g, min_success)
    return TopologyReport(
        state_count=len(states),
        edge_count=len(edges),
        scc_count=len(sccs),
        largest_scc_size=max((len(c) for c in sccs), default=0),
        nontrivial_sccs=sorted((sorted(c) for c in sccs if len(c) > 1), key=lambda c: (-len(c), c)),
        blue_nodes=sorted(blue_nodes(g)),
        red_edges=red_edges(g, red_k),
        skeleton_node_count=len(sk.states),
        skeleton_edge_count=len(sk.edges),
    )


def to_networkx(g: Graph) -> nx.DiGraph:
    states, edges = _parts(g)
    G = nx.DiGraph()
    for s in states:
        G.add_node(s.id, trust=float(s.trust), visits=int(s.visit_count),
                   successes=int(s.success_count), exemplar=s.exemplar)
    for e in edges:
        G.add_edge(e.source, e.target, success=int(e.success_count),
                   total=int(e.total_count), rate=float(e.rate))
    return G


def _trust_color(trust: float) -> str:
    if trust < 0.5:
        return "blue"
    if trust >= 0.7:
        return "red"
    return "gray"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def to_dot(g: Graph) -> str:
    states, edges = _parts(g)
    lines = ["digraph cognitive_map {"]
    for s in states:
        label = _dot_escape(s.exemplar[:40])
        lines.append(
            f'  {s.id} [label="{s.id}: {label}", trust={s.trust!r}, visits={s.visit_count}, '
            f'color={_trust_color(s.trust)}, style=filled, fillcolor={_trust_color(s.trust)}];'
        )
    for e in edges:
        lines.append(f"  {e.source} -> {e.target} [success={e.success_count}, total={e.total_count}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graph(g: Graph, fmt: str, path: str | os.PathLike) -> Path:
    if fmt not in EXPORT_FORMATS:
        raise UnknownFormatError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    path = Path(path)
    if fmt == "dot":
        path.write_text(to_dot(g), encoding="utf-8")
    elif fmt == "graphml":
        nx.write_graphml(to_networkx(g), path)
    else:
        states, edges = _parts(g)
        doc = {
            "nodes": [{"id": s.id, "trust": s.trust, "visits": s.visit_count,
                       "successes": s.success_count, "exemplar": s.exemplar} for s in states],
            "edges": [{"src": e.source, "dst": e.target, "success": e.success_count,
                       "total": e.total_count} for e in edges],
        }
        path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path
