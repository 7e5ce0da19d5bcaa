"""Undirected topologies, static combination weights and spectral helpers.

Agents are indexed ``0..K-1``. Matrices are plain ``numpy`` float arrays;
:func:`as_matrix` is the single validation gate used across the package.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import mmread, mmwrite

from .errors import InvalidInputError, InvalidParameterError

TOPOLOGIES = ("path", "ring", "star", "complete", "hypercube")

MAX_AGENTS = 256


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array or raise InvalidInputError."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on ``num_agents`` vertices."""

    num_agents: int
    edges: frozenset = field(default_factory=frozenset)
    name: str = ""

    def __post_init__(self):
        K = int(self.num_agents)
        if K < 1:
            raise InvalidParameterError(f"num_agents must be >= 1, got {self.num_agents}")
        if K > MAX_AGENTS:
            raise InvalidParameterError(f"num_agents capped at {MAX_AGENTS}, got {K}")
        normalized = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise InvalidInputError(f"self-loop at vertex {i}")
            if not (0 <= i < K and 0 <= j < K):
                raise InvalidInputError(f"edge {(i, j)} has an endpoint outside [0, {K})")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "num_agents", K)
        object.__setattr__(self, "edges", frozenset(normalized))

    @property
    def K(self) -> int:
        return self.num_agents

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.K, self.K))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.K, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, k: int) -> list[int]:
        return sorted({j for i, j in self.edges if i == k} | {i for i, j in self.edges if j == k})

    def support(self) -> np.ndarray:
        """Boolean mask of entries a combination matrix may occupy (edges plus diagonal)."""
        return self.adjacency().astype(bool) | np.eye(self.K, dtype=bool)

    def _bfs(self, source: int) -> np.ndarray:
        nbrs = [self.neighbors(k) for k in range(self.K)]
        dist = np.full(self.K, -1)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def is_connected(self) -> bool:
        return bool(np.all(self._bfs(0) >= 0))

    def diameter(self) -> int:
        if not self.is_connected():
            raise InvalidInputError("diameter of a disconnected graph is undefined")
        return int(max(self._bfs(s).max() for s in range(self.K)))

    def to_dict(self) -> dict:
        return {"K": self.K, "edges": [list(e) for e in self.sorted_edges()], "name": self.name}

    @classmethod
    def from_dict(cls, doc: dict) -> "Graph":
        try:
            return cls(int(doc["K"]), frozenset(tuple(e) for e in doc["edges"]), str(doc.get("name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed graph document: {exc}") from exc


def build_topology(kind: str, size_param: int) -> Graph:
    """Build a connected graph of a named family.

    For ``hypercube`` the size parameter is the dimension ``d`` and the
    graph has ``2**d`` agents; for all other families it is ``K``.
    """
    n = int(size_param)
    if n < 1:
        raise InvalidParameterError(f"size_param must be >= 1, got {size_param}")
    if kind == "path":
        edges = {(k, k + 1) for k in range(n - 1)}
        K = n
    elif kind == "ring":
        edges = {(k, (k + 1) % n) for k in range(n)} if n > 2 else {(k, k + 1) for k in range(n - 1)}
        K = n
    elif kind == "star":
        edges = {(0, k) for k in range(1, n)}
        K = n
    elif kind == "complete":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
        K = n
    elif kind == "hypercube":
        K = 2**n
        edges = {(v, v ^ (1 << b)) for v in range(K) for b in range(n) if v < v ^ (1 << b)}
    else:
        raise InvalidParameterError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    g = Graph(K, frozenset(edges), f"{kind}:{n}")
    if not g.is_connected():
        raise InvalidInputError(f"{g.name} is not connected")
    return g


def parse_topology(spec: str) -> Graph:
    """Parse ``"kind:param"`` (e.g. ``"path:16"``) into a graph."""
    kind, sep, param = spec.partition(":")
    if not sep:
        raise InvalidParameterError(f"topology spec {spec!r} must look like kind:param")
    try:
        n = int(param)
    except ValueError as exc:
        raise InvalidParameterError(f"topology size {param!r} is not an integer") from exc
    return build_topology(kind.strip(), n)


def metropolis_weights(g: Graph) -> np.ndarray:
    """Metropolis-Hastings combination matrix of ``g``."""
    if not g.is_connected():
        raise InvalidInputError(f"graph {g.name!r} is not connected")
    deg = g.degrees()
    A = np.zeros((g.K, g.K))
    for i, j in g.edges:
        A[i, j] = A[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    A[np.diag_indices(g.K)] = 1.0 - A.sum(axis=1)
    return A


def laplacian(g: Graph) -> np.ndarray:
    adj = g.adjacency()
    return np.diag(adj.sum(axis=1)) - adj


def _check_symmetric(a, tol=1e-10) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"matrix must be square, got shape {a.shape}")
    if np.max(np.abs(a - a.T)) > tol:
        raise InvalidInputError("matrix is not symmetric")
    return a


def sorted_eigenvalues(a) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, largest first."""
    a = _check_symmetric(a)
    vals = np.linalg.eigvalsh(0.5 * (a + a.T))
    return np.sort(vals, kind="stable")[::-1]


def second_eigenvalue(a) -> float:
    """Second-largest (signed) eigenvalue of a symmetric matrix.

    A 1x1 input has no second eigenvalue and raises InvalidInputError.
    """
    vals = sorted_eigenvalues(a)
    if vals.size < 2:
        raise InvalidInputError("second eigenvalue needs at least a 2x2 matrix")
    return float(vals[1])


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=2) + "\n")


def load_graph(path) -> Graph:
    g = Graph.from_dict(json.loads(Path(path).read_text()))
    if not g.is_connected():
        raise InvalidInputError(f"graph in {path} is not connected")
    return g


def write_matrix(a, path) -> None:
    """Write a dense matrix in MatrixMarket array format at full precision."""
    mmwrite(str(path), as_matrix(a), field="real", precision=17)


def read_matrix(path) -> np.ndarray:
    m = mmread(str(path))
    if hasattr(m, "toarray"):
        m = m.toarray()
    return as_matrix(m, name=str(path))
