"""Undirected communication graphs over ``n`` agents.

Nodes are the integers ``0..n-1``; grid nodes are numbered row-major.
Every generator returns a connected graph or raises.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import BadDimensions, NotConnected, ParseError

__all__ = [
    "GraphKind",
    "Graph",
    "build_topology",
    "is_connected",
    "write_edge_list",
    "read_edge_list",
    "ER_MAX_RETRIES",
]

ER_MAX_RETRIES = 1000


class GraphKind(str, enum.Enum):
    COMPLETE = "complete"
    ERDOS_RENYI = "erdos_renyi"
    GRID2D = "grid"
    PATH = "path"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, text: str) -> "GraphKind":
        aliases = {"er": cls.ERDOS_RENYI, "grid2d": cls.GRID2D, "erdos-renyi": cls.ERDOS_RENYI}
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class Graph:
    """Immutable undirected simple graph.

    ``edges`` holds pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    kind: GraphKind = GraphKind.CUSTOM
    rows: int | None = None
    cols: int | None = None
    _adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise BadDimensions(f"graph needs at least one node, got n={self.n}")
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise BadDimensions(f"edge ({i}, {j}) is not a valid pair with i < j < {self.n}")
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]], kind: GraphKind = GraphKind.CUSTOM) -> "Graph":
        edges = set()
        for i, j in pairs:
            if i == j:
                raise BadDimensions(f"self-loop at node {i}")
            edges.add((min(i, j), max(i, j)))
        return cls(n=n, edges=frozenset(edges), kind=kind)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self._adj], dtype=int)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=float)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a


def is_connected(g: Graph) -> bool:
    """Breadth-first search from node 0."""
    seen = [False] * g.n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        i = queue.popleft()
        for j in g.neighbors(i):
            if not seen[j]:
                seen[j] = True
                count += 1
                queue.append(j)
    return count == g.n


def _complete(n: int) -> set[tuple[int, int]]:
    return {(i, j) for i in range(n) for j in range(i + 1, n)}


def _path(n: int) -> set[tuple[int, int]]:
    return {(i, i + 1) for i in range(n - 1)}


def _grid(rows: int, cols: int) -> set[tuple[int, int]]:
    edges = set()
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.add((k, k + 1))
            if r + 1 < rows:
                edges.add((k, k + cols))
    return edges


def _erdos_renyi(n: int, p: float, seed: int) -> set[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(ER_MAX_RETRIES):
        keep = rng.random(iu.size) < p
        edges = {(int(i), int(j)) for i, j in zip(iu[keep], ju[keep])}
        if is_connected(Graph(n=n, edges=frozenset(edges))):
            return edges
    raise NotConnected(
        f"Erdos-Renyi graph with n={n}, p={p} still disconnected after {ER_MAX_RETRIES} draws"
    )


def build_topology(
    kind: GraphKind | str,
    n: int,
    *,
    p: float | None = None,
    rows: int | None = None,
    cols: int | None = None,
    seed: int = 0,
) -> Graph:
    """Build a connected graph of the requested family.

    Erdos-Renyi draws retry from the same seeded stream until the sample is
    connected, at most ``ER_MAX_RETRIES`` times. A 2-D grid needs
    ``rows * cols == n``; when only ``n`` is given the most square
    factorisation is used.
    """
    kind = GraphKind.parse(kind) if isinstance(kind, str) else kind
    if n < 1:
        raise BadDimensions(f"n must be positive, got {n}")
    if kind is GraphKind.COMPLETE:
        edges = _complete(n)
    elif kind is GraphKind.PATH:
        edges = _path(n)
    elif kind is GraphKind.GRID2D:
        if rows is None and cols is None:
            rows = max(r for r in range(1, int(np.sqrt(n)) + 1) if n % r == 0)
            cols = n // rows
        elif rows is None:
            rows = n // cols if cols else 0
        elif cols is None:
            cols = n // rows if rows else 0
        if rows < 1 or cols < 1 or rows * cols != n:
            raise BadDimensions(f"grid {rows}x{cols} does not have n={n} nodes")
        g = Graph(n=n, edges=frozenset(_grid(rows, cols)), kind=kind, rows=rows, cols=cols)
        if not is_connected(g):
            raise NotConnected("grid graph is disconnected")
        return g
    elif kind is GraphKind.ERDOS_RENYI:
        if p is None or not (0.0 < p <= 1.0):
            raise BadDimensions(f"Erdos-Renyi needs 0 < p <= 1, got p={p}")
        edges = _erdos_renyi(n, p, seed)
    else:
        raise BadDimensions(f"cannot generate graphs of kind {kind.value!r}")
    g = Graph(n=n, edges=frozenset(edges), kind=kind)
    if not is_connected(g):
        raise NotConnected(f"{kind.value} graph with n={n} is disconnected")
    return g


def write_edge_list(g: Graph, path: str | Path) -> None:
    lines = [str(g.n)] + [f"{i} {j}" for i, j in g.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> Graph:
    """Read the ``n`` / ``i j`` edge-list format written by :func:`write_edge_list`."""
    text = Path(path).read_text().splitlines()
    rows = [(k + 1, line.strip()) for k, line in enumerate(text) if line.strip()]
    if not rows:
        raise ParseError(1, "empty edge list")
    try:
        n = int(rows[0][1])
    except ValueError:
        raise ParseError(rows[0][0], "first line must be the node count") from None
    pairs = []
    for lineno, line in rows[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(lineno, "expected 'i j'")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(lineno, "node ids must be integers") from None
    return Graph.from_pairs(n, pairs)
