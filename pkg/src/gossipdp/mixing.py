"""Gossip (mixing) matrices built from communication graphs."""

from __future__ import annotations

import dataclasses
import enum
import io

import numpy as np

from gossipdp.errors import ParameterError, ParseError
from gossipdp.graph import Graph

STOCHASTIC_TOL = 1e-12


class Kind(str, enum.Enum):
    DOUBLY_STOCHASTIC = "doubly-stochastic"
    ROW_STOCHASTIC = "row-stochastic"
    GENERAL = "general"


@dataclasses.dataclass(frozen=True, eq=False)
class GossipMatrix:
    """Mixing weights ``W`` together with the stochasticity class it claims.

    ``graph`` is the topology the weights were built from, when known; it is
    used to look up closed neighborhoods. Without it the support of ``W`` is
    used instead.
    """

    W: np.ndarray
    kind: Kind = Kind.GENERAL
    graph: Graph | None = None

    def __post_init__(self):
        w = np.array(self.W, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ParameterError(f"W must be square, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.graph is not None and self.graph.n != w.shape[0]:
            raise ParameterError(f"graph has {self.graph.n} nodes but W is {w.shape[0]}x{w.shape[0]}")

    def closed_neighborhood(self, j: int) -> list[int]:
        if not 0 <= j < self.n:
            raise ParameterError(f"node {j} out of range for n={self.n}")
        if self.graph is not None:
            return self.graph.closed_neighborhood(j)
        support = (self.W[j] != 0) | (self.W[:, j] != 0)
        support[j] = True
        return [int(k) for k in np.flatnonzero(support)]

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    kind: Kind
    max_row_deviation: float
    max_col_deviation: float
    min_entry: float
    support_violations: int
    passed: bool


def max_degree_weights(g: Graph) -> GossipMatrix:
    """``W_ij = A_ij / max(d_i, d_j)`` off the diagonal, rows completed to 1.

    Symmetric and doubly stochastic for every graph; isolated nodes get a pure
    self-loop.
    """
    a = g.adjacency.astype(float)
    d = g.degrees().astype(float)
    denom = np.maximum.outer(d, d)
    w = np.divide(a, denom, out=np.zeros_like(a), where=a > 0)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return GossipMatrix(w, Kind.DOUBLY_STOCHASTIC, g)


def neighborhood_average_weights(g: Graph) -> GossipMatrix:
    """Row-stochastic average over closed neighborhoods: ``W_ij = 1/|N̄_i|``."""
    m = g.adjacency.astype(float) + np.eye(g.n)
    return GossipMatrix(m / m.sum(axis=1, keepdims=True), Kind.ROW_STOCHASTIC, g)


def validate(gm: GossipMatrix, graph: Graph | None = None, tol: float = STOCHASTIC_TOL) -> ValidationReport:
    """Check ``gm`` against its declared kind and, optionally, the graph support."""
    w = gm.W
    ones = np.ones(gm.n)
    row_dev = float(np.max(np.abs(w @ ones - 1.0))) if gm.n else 0.0
    col_dev = float(np.max(np.abs(ones @ w - 1.0))) if gm.n else 0.0
    min_entry = float(w.min()) if gm.n else 0.0

    violations = 0
    if graph is not None:
        if graph.n != gm.n:
            raise ParameterError(f"graph has {graph.n} nodes but W is {gm.n}x{gm.n}")
        allowed = graph.adjacency.astype(bool) | np.eye(gm.n, dtype=bool)
        violations = int(np.count_nonzero((w != 0) & ~allowed))

    ok = violations == 0
    if gm.kind in (Kind.ROW_STOCHASTIC, Kind.DOUBLY_STOCHASTIC):
        ok = ok and row_dev <= tol and min_entry >= 0.0
    if gm.kind is Kind.DOUBLY_STOCHASTIC:
        ok = ok and col_dev <= tol
    return ValidationReport(gm.kind, row_dev, col_dev, min_entry, violations, ok)


def to_csv(gm: GossipMatrix) -> str:
    buf = io.StringIO()
    buf.write(f"# kind={gm.kind.value}\n")
    for row in gm.W:
        buf.write(",".join(repr(float(x)) for x in row))
        buf.write("\n")
    return buf.getvalue()


def from_csv(text: str) -> GossipMatrix:
    kind = Kind.GENERAL
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "kind":
                try:
                    kind = Kind(value.strip())
                except ValueError:
                    raise ParseError(f"unknown kind {value.strip()!r}", lineno) from None
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise ParseError(f"non-numeric entry in {raw!r}", lineno) from None
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ParseError("matrix must be square and non-empty")
    return GossipMatrix(np.array(rows), kind)
