"""Empirical graphs over sites: star (client-server) and peer-to-peer constructors."""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np

SERVER = "server"


class Architecture(str, enum.Enum):
    CLIENT_SERVER = "client-server"
    PEER_TO_PEER = "peer-to-peer"


class TopologyKind(str, enum.Enum):
    STAR = "star"
    RING = "ring"
    RANDOM_REGULAR = "random-regular"
    COMPLETE = "complete"
    EXPLICIT = "explicit"


class TopologyError(ValueError):
    pass


class DisconnectedGraphWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TopologySpec:
    kind: TopologyKind = TopologyKind.RANDOM_REGULAR
    degree: int = 3
    seed: int = 0
    edges: tuple[tuple[str, str, float], ...] = ()
    max_retries: int = 100

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.kind is TopologyKind.RANDOM_REGULAR and self.degree < 1:
            raise TopologyError("random-regular degree must be >= 1")

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "seed": self.seed}
        if self.kind is TopologyKind.RANDOM_REGULAR:
            out["degree"] = self.degree
        if self.kind is TopologyKind.EXPLICIT:
            out["edges"] = [list(e) for e in self.edges]
        return out


@dataclass(frozen=True)
class EmpiricalGraph:
    """Undirected weighted graph; edges are stored once as ``(a, b, weight)`` with ``a < b``."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, float], ...]
    architecture: Architecture
    server: str | None = None
    _adj: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        nodes = tuple(self.nodes)
        if len(set(nodes)) != len(nodes):
            raise TopologyError("duplicate node ids")
        nodeset = set(nodes)
        canon: dict[tuple[str, str], float] = {}
        for a, b, w in self.edges:
            if a == b:
                raise TopologyError(f"self-loop on {a!r}")
            if a not in nodeset or b not in nodeset:
                raise TopologyError(f"edge ({a!r}, {b!r}) references an unknown node")
            if not w > 0:
                raise TopologyError(f"edge ({a!r}, {b!r}) has non-positive weight {w}")
            key = (a, b) if a < b else (b, a)
            if key in canon:
                raise TopologyError(f"duplicate edge {key}")
            canon[key] = float(w)
        edges = tuple((a, b, canon[(a, b)]) for a, b in sorted(canon))
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in nodes}
        for a, b, w in edges:
            adj[a].append((b, w))
            adj[b].append((a, w))
        for n in adj:
            adj[n].sort()
        if self.architecture is Architecture.CLIENT_SERVER:
            if self.server not in nodeset:
                raise TopologyError("client-server graph needs its server among the nodes")
            clients = nodeset - {self.server}
            if {b for b, _ in adj[self.server]} != clients or any(len(adj[c]) != 1 for c in clients):
                raise TopologyError("client-server graph must be a star around the server")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_adj", adj)

    @property
    def clients(self) -> list[str]:
        return [n for n in self.nodes if n != self.server]

    def neighbors(self, k: str) -> list[tuple[str, float]]:
        try:
            return list(self._adj[k])
        except KeyError:
            raise KeyError(f"unknown node {k!r}") from None

    def degree(self, k: str) -> int:
        return len(self.neighbors(k))

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        g.add_weighted_edges_from(self.edges)
        return g

    def is_connected(self) -> bool:
        return len(self.nodes) <= 1 or nx.is_connected(self.to_networkx())

    def adjacency_json(self) -> str:
        return json.dumps(
            {
                "architecture": self.architecture.value,
                "server": self.server,
                "nodes": list(self.nodes),
                "adjacency": {n: {m: w for m, w in self._adj[n]} for n in self.nodes},
            },
            indent=2,
        )


def build_graph(sites: Sequence[str], spec: TopologySpec) -> EmpiricalGraph:
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise TopologyError("duplicate site ids")
    kind = spec.kind

    if kind is TopologyKind.STAR:
        if not sites:
            raise TopologyError("a star needs at least one client")
        if SERVER in sites:
            raise TopologyError(f"site id {SERVER!r} is reserved for the server node")
        return EmpiricalGraph(
            (SERVER, *sites), tuple((SERVER, s, 1.0) for s in sites), Architecture.CLIENT_SERVER, server=SERVER
        )

    if kind is TopologyKind.EXPLICIT:
        g = EmpiricalGraph(tuple(sites), tuple(spec.edges), Architecture.PEER_TO_PEER)
        if not g.is_connected():
            warnings.warn("explicit edge list leaves the graph disconnected", DisconnectedGraphWarning, stacklevel=2)
        return g

    K = len(sites)
    if K < 2:
        raise TopologyError(f"{kind.value} topology needs at least 2 sites, got {K}")
    if kind is TopologyKind.RING:
        pairs = [(sites[i], sites[(i + 1) % K]) for i in range(K if K > 2 else 1)]
    elif kind is TopologyKind.COMPLETE:
        pairs = [(sites[i], sites[j]) for i in range(K) for j in range(i + 1, K)]
    elif kind is TopologyKind.RANDOM_REGULAR:
        pairs = [(sites[a], sites[b]) for a, b in _random_regular(K, spec.degree, spec.seed, spec.max_retries)]
    else:  # pragma: no cover
        raise TopologyError(f"unhandled topology kind {kind}")
    return EmpiricalGraph(tuple(sites), tuple((a, b, 1.0) for a, b in pairs), Architecture.PEER_TO_PEER)


def _random_regular(K: int, degree: int, seed: int, max_retries: int) -> list[tuple[int, int]]:
    if not 1 <= degree < K:
        raise TopologyError(f"degree {degree} infeasible for {K} nodes (need 1 <= degree < K)")
    if (K * degree) % 2:
        raise TopologyError(f"degree {degree} infeasible for {K} nodes: K * degree is odd")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        g = nx.random_regular_graph(degree, K, seed=int(rng.integers(2**31)))
        if nx.is_connected(g):
            return sorted(tuple(sorted(e)) for e in g.edges())
    raise TopologyError(f"no connected {degree}-regular graph on {K} nodes after {max_retries} tries")


# ---------------------------------------------------------------- edge-list I/O


def write_edge_list(graph: EmpiricalGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, w in graph.edges:
            fh.write(f"{a} {b} {w!r}\n")


def read_edge_list(path: str | Path) -> tuple[tuple[str, str, float], ...]:
    """Parse ``k k' weight`` triples; blank lines and ``#`` comments are skipped."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TopologyError(f"{path}:{lineno}: expected 'k k2 weight', got {line!r}")
            try:
                w = float(parts[2])
            except ValueError:
                raise TopologyError(f"{path}:{lineno}: weight {parts[2]!r} is not a number") from None
            edges.append((parts[0], parts[1], w))
    return tuple(edges)
