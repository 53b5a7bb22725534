"""Graph container, edge-list ingestion and connectivity-preserving splits."""
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "TrainSplit",
    "EdgeListError",
    "DisconnectedGraphError",
    "EdgeListWarning",
    "load_edge_list",
    "write_edge_list",
    "connected",
    "make_split",
]

KINDS = ("unsigned", "signed")


class EdgeListError(ValueError):
    """Malformed edge-list input."""

    def __init__(self, msg, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


class DisconnectedGraphError(ValueError):
    pass


class EdgeListWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with integer edge weights.

    Edges are stored once per dyad as ``(i, j)`` with ``i < j``, sorted
    lexicographically. For bipartite graphs the row nodes occupy ids
    ``[0, R)`` and the column nodes ``[R, R + C)``.
    """

    num_nodes: int
    edges: np.ndarray
    weights: np.ndarray
    kind: str = "unsigned"
    bipartite: tuple | None = None
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.int64).reshape(-1)
        if len(e) != len(w):
            raise ValueError("edges and weights differ in length")
        n = int(self.num_nodes)
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise ValueError("node id out of range")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must be stored as i < j without self-loops")
            keys = e[:, 0] * n + e[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise ValueError("edges must be sorted and unique")
        if np.any(w == 0):
            raise ValueError("zero edge weight")
        if self.kind == "unsigned" and np.any(w != 1):
            raise ValueError("unsigned graphs carry unit weights only")
        if self.bipartite is not None:
            r, c = (int(v) for v in self.bipartite)
            if r + c != n:
                raise ValueError("bipartite partition sizes must sum to num_nodes")
            if len(e) and (np.any(e[:, 0] >= r) or np.any(e[:, 1] < r)):
                raise ValueError("bipartite edge does not cross the partition")
            object.__setattr__(self, "bipartite", (r, c))
        e.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, num_nodes, edges, weights=None, kind="unsigned", bipartite=None):
        """Build a graph from arbitrary-orientation dyads; duplicates are not merged."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(e), dtype=np.int64)
        w = np.asarray(weights, dtype=np.int64).reshape(-1)
        e = np.sort(e, axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        return cls(num_nodes, e[order], w[order], kind=kind, bipartite=bipartite)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.kind == other.kind
            and self.bipartite == other.bipartite
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def signed(self):
        return self.kind == "signed"

    @property
    def num_dyads(self):
        if self.bipartite is not None:
            return self.bipartite[0] * self.bipartite[1]
        return self.num_nodes * (self.num_nodes - 1) // 2

    @cached_property
    def _keys(self):
        return self.edges[:, 0] * self.num_nodes + self.edges[:, 1]

    def dyad_weights(self, pairs):
        """Observed weight y_ij for each row of ``pairs`` (0 for non-edges)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        q = lo * self.num_nodes + hi
        pos = np.searchsorted(self._keys, q)
        pos = np.minimum(pos, max(len(self._keys) - 1, 0))
        if not len(self._keys):
            return np.zeros(len(q), dtype=np.int64)
        hit = self._keys[pos] == q
        return np.where(hit, self.weights[pos], 0)

    def has_dyad(self, i, j):
        return bool(self.dyad_weights([[i, j]])[0] != 0)

    def adjacency(self, absolute=False):
        """Symmetric sparse adjacency matrix in CSR format."""
        n = self.num_nodes
        w = np.abs(self.weights) if absolute else self.weights
        a = sp.coo_matrix((w, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    def degrees(self):
        deg = np.bincount(self.edges[:, 0], minlength=self.num_nodes)
        return deg + np.bincount(self.edges[:, 1], minlength=self.num_nodes)

    def is_dyad(self, i, j):
        """Whether (i, j) belongs to the model's dyad universe."""
        if i == j:
            return False
        if self.bipartite is None:
            return True
        r = self.bipartite[0]
        return (i < r) != (j < r)

    def iter_dyads(self, chunk=1 << 20):
        """Yield all model dyads (i < j, or cross-partition) as (m, 2) arrays."""
        n = self.num_nodes
        if self.bipartite is not None:
            r, c = self.bipartite
            rows_per = max(1, chunk // max(c, 1))
            cols = np.arange(r, n, dtype=np.int64)
            for start in range(0, r, rows_per):
                rows = np.arange(start, min(r, start + rows_per), dtype=np.int64)
                yield np.column_stack([np.repeat(rows, c), np.tile(cols, len(rows))])
            return
        buf = []
        size = 0
        for i in range(n - 1):
            js = np.arange(i + 1, n, dtype=np.int64)
            buf.append(np.column_stack([np.full(len(js), i, dtype=np.int64), js]))
            size += len(js)
            if size >= chunk:
                yield np.concatenate(buf)
                buf, size = [], 0
        if buf:
            yield np.concatenate(buf)

    def all_dyads(self):
        parts = list(self.iter_dyads())
        if not parts:
            return np.empty((0, 2), dtype=np.int64)
        return np.concatenate(parts)

    def without(self, drop_mask):
        """Copy of the graph with the masked edges removed."""
        keep = ~np.asarray(drop_mask, dtype=bool)
        return Graph(self.num_nodes, self.edges[keep], self.weights[keep],
                     kind=self.kind, bipartite=self.bipartite)

    def relabel(self, perm):
        """Graph with node ``perm[k]`` renamed to ``k``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph.from_edges(self.num_nodes, inv[self.edges], self.weights, kind=self.kind)


@dataclass(frozen=True, eq=False)
class TrainSplit:
    """Residual training graph plus held-out links and zero-dyad controls."""

    residual: Graph
    test_edges: np.ndarray
    test_weights: np.ndarray
    controls: np.ndarray
    target: int

    @property
    def removed(self):
        return len(self.test_edges)

    @property
    def shortfall(self):
        return self.target - self.removed

    def __eq__(self, other):
        if not isinstance(other, TrainSplit):
            return NotImplemented
        return (
            self.residual == other.residual
            and self.target == other.target
            and np.array_equal(self.test_edges, other.test_edges)
            and np.array_equal(self.test_weights, other.test_weights)
            and np.array_equal(self.controls, other.controls)
        )

    __hash__ = None


def _parse_int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise EdgeListError(f"not an integer: {tok!r}", lineno) from None


def load_edge_list(path, kind="unsigned", bipartite=None, num_nodes=None):
    """Read a whitespace-separated ``i j [w]`` edge list.

    Lines starting with ``#`` are skipped. Duplicate dyads are merged by
    summing their weights (unsigned graphs stay binary), self-loops and dyads
    whose weights cancel to zero are dropped with a warning. For bipartite
    input pass the partition sizes ``(R, C)``; column ids are read in
    ``[0, C)`` and shifted by ``R``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    acc = defaultdict(int)
    self_loops = 0
    max_id = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            toks = s.split()
            if len(toks) not in (2, 3):
                raise EdgeListError(f"expected 2 or 3 fields, got {len(toks)}", lineno)
            i, j = _parse_int(toks[0], lineno), _parse_int(toks[1], lineno)
            w = _parse_int(toks[2].lstrip("+"), lineno) if len(toks) == 3 else 1
            if i < 0 or j < 0:
                raise EdgeListError("negative node id", lineno)
            if kind == "unsigned" and w <= 0:
                raise EdgeListError(f"signed weight {w} in unsigned mode", lineno)
            if bipartite is not None:
                r, c = bipartite
                if i >= r or j >= c:
                    raise EdgeListError("id outside declared partition", lineno)
                j += r
            elif i == j:
                self_loops += 1
                continue
            max_id = max(max_id, i, j)
            acc[(min(i, j), max(i, j))] += w
    zeros = [k for k, v in acc.items() if v == 0]
    for k in zeros:
        del acc[k]
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop(s)", EdgeListWarning, stacklevel=2)
    if zeros:
        warnings.warn(f"dropped {len(zeros)} dyad(s) whose weights sum to zero",
                      EdgeListWarning, stacklevel=2)
    if bipartite is not None:
        n = bipartite[0] + bipartite[1]
    elif num_nodes is not None:
        n = int(num_nodes)
        if max_id >= n:
            raise EdgeListError(f"node id {max_id} exceeds declared size {n}")
    else:
        n = max_id + 1
    items = sorted(acc.items())
    edges = np.array([k for k, _ in items], dtype=np.int64).reshape(-1, 2)
    weights = np.array([v for _, v in items], dtype=np.int64)
    if kind == "unsigned":
        weights = np.ones_like(weights)
    return Graph(n, edges, weights, kind=kind, bipartite=bipartite,
                 stats={"self_loops": self_loops, "zero_dyads": len(zeros)})


def write_edge_list(path, edges, weights=None, bipartite=None, header=None):
    """Write ``i j [w]`` rows; bipartite column ids are shifted back to ``[0, C)``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if bipartite is not None:
        edges = edges - np.array([0, bipartite[0]])
    lines = []
    if header:
        lines.append(f"# {header}")
    if weights is None:
        lines += [f"{i}\t{j}" for i, j in edges]
    else:
        lines += [f"{i}\t{j}\t{w}" for (i, j), w in zip(edges, weights)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def connected(g):
    """True iff one component spans all nodes, ignoring edge signs."""
    if g.num_nodes == 0:
        return False
    if g.num_nodes == 1:
        return True
    n_comp, _ = connected_components(g.adjacency(absolute=True), directed=False)
    return n_comp == 1


def _still_connected(adj, u, v):
    """Bidirectional BFS between u and v, always expanding the smaller frontier.

    Cost is bounded by the smaller side when (u, v) is a bridge.
    """
    seen_u, seen_v = {u}, {v}
    front_u, front_v = [u], [v]
    while front_u and front_v:
        if len(front_u) > len(front_v):
            front_u, front_v = front_v, front_u
            seen_u, seen_v = seen_v, seen_u
        nxt = []
        for a in front_u:
            for b in adj[a]:
                if b in seen_v:
                    return True
                if b not in seen_u:
                    seen_u.add(b)
                    nxt.append(b)
        front_u = nxt
    return False


def _sample_controls(g, k, rng):
    n = g.num_nodes
    if g.bipartite is not None:
        r, c = g.bipartite
        available = r * c - g.num_edges
    else:
        available = g.num_dyads - g.num_edges
    if k > available:
        logger.warning("only %d non-edges available for %d controls", available, k)
        k = available
    taken = set(g._keys.tolist())
    out = []
    while len(out) < k:
        if g.bipartite is not None:
            i = int(rng.integers(0, r))
            j = int(rng.integers(r, n))
        else:
            i, j = (int(v) for v in rng.integers(0, n, size=2))
            if i == j:
                continue
            i, j = min(i, j), max(i, j)
        key = i * n + j
        if key in taken:
            continue
        taken.add(key)
        out.append((i, j))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_split(g, removal_fraction, seed=None):
    """Hold out edges while keeping the residual graph connected.

    Edges are visited in a seeded random order and a removal is accepted only
    if its endpoints stay connected in the residual. Controls are uniformly
    drawn non-edges of the original graph, as many as removed links (or
    every non-edge, if the graph is too dense to supply that many). When
    fewer than ``floor(fraction * |E|)`` edges can go, the maximum reachable
    in that order is removed and the shortfall is logged.
    """
    if not 0.0 < removal_fraction < 1.0:
        raise ValueError("removal_fraction must lie in (0, 1)")
    if not connected(g):
        raise DisconnectedGraphError("input graph is not connected")
    rng = np.random.default_rng(seed)
    target = int(np.floor(removal_fraction * g.num_edges))
    order = rng.permutation(g.num_edges)

    adj = [set() for _ in range(g.num_nodes)]
    for a, b in g.edges.tolist():
        adj[a].add(b)
        adj[b].add(a)
    # an edge can only go while the residual keeps more than a spanning tree
    budget = g.num_edges - (g.num_nodes - 1)
    removed = np.zeros(g.num_edges, dtype=bool)
    count = 0
    for idx in order.tolist():
        if count >= target or count >= budget:
            break
        a, b = (int(v) for v in g.edges[idx])
        adj[a].discard(b)
        adj[b].discard(a)
        if _still_connected(adj, a, b):
            removed[idx] = True
            count += 1
        else:
            adj[a].add(b)
            adj[b].add(a)
    if count < target:
        logger.warning("split removed %d of %d target edges", count, target)
    residual = g.without(removed)
    test_idx = np.flatnonzero(removed)
    controls = _sample_controls(g, count, rng)
    return TrainSplit(residual, g.edges[test_idx], g.weights[test_idx], controls, target)
