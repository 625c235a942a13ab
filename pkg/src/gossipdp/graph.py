"""Undirected communication graphs and neighborhood queries."""

from __future__ import annotations

import dataclasses
from collections import deque
from typing import Iterable, Sequence

import numpy as np

from gossipdp.errors import ParameterError, ParseError


@dataclasses.dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    Attributes:
      adjacency: symmetric 0/1 matrix with zero diagonal. Stored read-only.
      labels: original node ids when the graph was compacted from an edge
        list, otherwise None.
    """

    adjacency: np.ndarray
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.uint8, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ParameterError(f"adjacency must be square, got shape {a.shape}")
        if np.any(a > 1):
            raise ParameterError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise ParameterError("adjacency must be symmetric")
        if np.any(np.diag(a)):
            raise ParameterError("adjacency must have a zero diagonal")
        if self.labels is not None and len(self.labels) != a.shape[0]:
            raise ParameterError("labels length must equal node count")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> list[tuple[int, int]]:
        """Edges as ``(i, j)`` with ``i < j`` in lexicographic order."""
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def degree(self, j: int) -> int:
        self._check_node(j)
        return int(self.adjacency[j].sum())

    def neighbors(self, j: int) -> list[int]:
        self._check_node(j)
        return [int(k) for k in np.flatnonzero(self.adjacency[j])]

    def closed_neighborhood(self, j: int) -> list[int]:
        """Return ``N_j ∪ {j}`` sorted ascending."""
        return sorted(self.neighbors(j) + [j])

    def has_edge(self, i: int, j: int) -> bool:
        self._check_node(i)
        self._check_node(j)
        return bool(self.adjacency[i, j])

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = np.zeros(self.n, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for w in np.flatnonzero(self.adjacency[v]):
                if not seen[w]:
                    seen[w] = True
                    queue.append(int(w))
        return bool(seen.all())

    def to_csv(self) -> str:
        """Edge list as ``i,j`` lines, one per undirected edge."""
        return "".join(f"{i},{j}\n" for i, j in self.edges())

    def _check_node(self, j: int) -> None:
        if not 0 <= j < self.n:
            raise ParameterError(f"node {j} out of range for n={self.n}")


def closed_neighborhood(g: Graph, j: int) -> list[int]:
    return g.closed_neighborhood(j)


def is_connected(g: Graph) -> bool:
    return g.is_connected()


def from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Build a graph from undirected edges; self-loops and duplicates are ignored."""
    if n < 0:
        raise ParameterError("n must be non-negative")
    a = np.zeros((n, n), dtype=np.uint8)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ParameterError(f"edge ({i}, {j}) references a node >= n={n}")
        if i != j:
            a[i, j] = a[j, i] = 1
    return Graph(a)


def erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """Sample G(n, p).

    The stream layout is fixed: ``numpy.random.default_rng(seed)`` (PCG64)
    draws one uniform in [0, 1) per unordered pair ``(i, j)``, ``i < j``, in
    lexicographic order, and the pair is an edge iff the draw is below ``p``.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    a = np.zeros((n, n), dtype=np.uint8)
    a[iu[keep], ju[keep]] = 1
    a[ju[keep], iu[keep]] = 1
    return Graph(a)


def from_edge_list(text: str, symmetrize: bool = True) -> Graph:
    """Parse a SNAP-style edge list.

    Lines starting with ``#`` and blank lines are skipped. Node ids are
    arbitrary non-negative integers and are compacted to ``0..n-1`` in order of
    first appearance. Without ``symmetrize`` the input must already list both
    directions of every edge.
    """
    index: dict[int, int] = {}
    arcs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"expected two node ids, got {raw!r}", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"node ids must be integers, got {raw!r}", lineno) from None
        if u < 0 or v < 0:
            raise ParseError(f"node ids must be non-negative, got {raw!r}", lineno)
        for x in (u, v):
            if x not in index:
                index[x] = len(index)
        arcs.append((index[u], index[v]))
    if not index:
        raise ParseError("edge list is empty")

    n = len(index)
    a = np.zeros((n, n), dtype=np.uint8)
    for i, j in arcs:
        if i != j:
            a[i, j] = 1
    if symmetrize:
        a = a | a.T
    elif not np.array_equal(a, a.T):
        raise ParameterError("edge list is directed; pass symmetrize=True")
    return Graph(a, labels=tuple(index))


def complete_graph(n: int) -> Graph:
    return Graph(np.ones((n, n), dtype=np.uint8) - np.eye(n, dtype=np.uint8))


def path_graph(n: int) -> Graph:
    return from_edges(n, [(k, k + 1) for k in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise ParameterError("a cycle needs at least 3 nodes")
    return from_edges(n, [(k, (k + 1) % n) for k in range(n)])


def star_graph(leaves: int) -> Graph:
    """Star with center 0 and nodes ``1..leaves`` as leaves."""
    return from_edges(leaves + 1, [(0, k) for k in range(1, leaves + 1)])


def selector(nodes: Sequence[int], n: int) -> np.ndarray:
    """Selector matrix ``S(nodes)`` of shape ``(len(nodes), n)``."""
    s = np.zeros((len(nodes), n))
    for row, k in enumerate(nodes):
        if not 0 <= k < n:
            raise ParameterError(f"node {k} out of range for n={n}")
        s[row, k] = 1.0
    return s
