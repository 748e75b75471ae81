"""Simplicial complexes over undirected graphs.

Builds the clique complex of a graph up to dimension 2 (nodes, edges,
triangles), with a fixed orientation convention: every simplex is stored
as its node tuple in ascending order, and simplices of each dimension are
indexed in lexicographic order.  The signed incidence (boundary) matrices
derived here are the raw material for the Hodge-Laplacian operators.

Boundary conventions
--------------------
B1 (nodes x edges): the column of edge (u, v) with u < v carries -1 at
row u and +1 at row v.
B2 (edges x triangles): the column of triangle (u, v, w) with u < v < w
carries +1 at edge (v, w), -1 at edge (u, w), +1 at edge (u, v).
These signs make B1 @ B2 = 0 hold exactly in integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "ComplexError",
    "Graph",
    "SignedIncidence",
    "SimplicialComplex",
    "build_complex",
    "sample_edges",
    "load_edge_list",
    "save_edge_list",
    "load_features",
    "save_features",
]


class ComplexError(ValueError):
    """Raised for malformed graphs, simplices, or input files."""


def _canonical_edges(n: int, pairs: np.ndarray) -> np.ndarray:
    """Return edges as a unique, lexicographically sorted (m, 2) array with u < v.

    Reversed duplicates collapse onto one row; self loops are dropped.
    Endpoints outside [0, n) raise ComplexError.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if pairs.min() < 0 or pairs.max() >= n:
        bad = pairs[(pairs.min(axis=1) < 0) | (pairs.max(axis=1) >= n)][0]
        raise ComplexError(
            f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n})"
        )
    lo = pairs.min(axis=1)
    hi = pairs.max(axis=1)
    keep = lo != hi  # drop self loops
    ordered = np.stack([lo[keep], hi[keep]], axis=1)
    if ordered.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(ordered, axis=0)


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes 0..n-1.

    ``edges`` is a (m, 2) int64 array, each row (u, v) with u < v, rows
    unique and lexicographically sorted.  Use :meth:`from_edges` to build
    one from arbitrary pair data; the constructor trusts its input.
    """

    n: int
    edges: np.ndarray

    @classmethod
    def from_edges(cls, n: int, pairs) -> "Graph":
        if n < 1:
            raise ComplexError(f"graph needs at least one node, got n={n}")
        return cls(n=n, edges=_canonical_edges(n, np.asarray(pairs)))

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix, shape (n, n), float64."""
        a = np.zeros((self.n, self.n), dtype=np.float64)
        if self.m:
            u, v = self.edges[:, 0], self.edges[:, 1]
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a

    @cached_property
    def adjacency_bool(self) -> np.ndarray:
        return self.adjacency > 0.0

    @cached_property
    def neighbor_lists(self) -> list[np.ndarray]:
        """Sorted neighbor array per node."""
        return [np.flatnonzero(self.adjacency_bool[i]) for i in range(self.n)]

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=np.int64)
        if self.m:
            np.add.at(d, self.edges[:, 0], 1)
            np.add.at(d, self.edges[:, 1], 1)
        return d

    def has_edge(self, u: int, v: int) -> bool:
        if u == v:
            return False
        return bool(self.adjacency_bool[u, v])

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map (u, v) with u < v to the edge's column index."""
        return {
            (int(u), int(v)): j for j, (u, v) in enumerate(self.edges)
        }


@dataclass(frozen=True)
class SignedIncidence:
    """Sparse signed incidence matrix in coordinate form.

    Entries are -1/+1 integers; ``to_dense`` materialises float64 (or any
    requested dtype, integer dtypes give exact arithmetic for identity
    checks such as B1 @ B2 = 0).
    """

    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    signs: np.ndarray

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=dtype)
        out[self.row_idx, self.col_idx] = self.signs.astype(dtype)
        return out

    def to_sparse(self):
        """scipy.sparse CSR copy, float64."""
        from scipy.sparse import coo_matrix

        return coo_matrix(
            (self.signs.astype(np.float64), (self.row_idx, self.col_idx)),
            shape=(self.rows, self.cols),
        ).tocsr()


def _enumerate_triangles(graph: Graph) -> np.ndarray:
    """All 3-cliques (u, v, w), u < v < w, lexicographically sorted.

    For each edge (u, v) the third node is any common neighbor w > v,
    which counts every triangle exactly once.
    """
    adj = graph.adjacency_bool
    found: list[tuple[int, int, int]] = []
    for u, v in graph.edges:
        common = np.flatnonzero(adj[u] & adj[v])
        for w in common[common > v]:
            found.append((int(u), int(v), int(w)))
    if not found:
        return np.empty((0, 3), dtype=np.int64)
    tri = np.array(sorted(found), dtype=np.int64)
    return tri


@dataclass(frozen=True)
class SimplicialComplex:
    """Clique complex of a graph up to dimension 2.

    ``edges`` and ``triangles`` hold ascending node tuples in
    lexicographic order; the row/column index of a simplex in the
    incidence matrices is its position in these arrays.
    """

    n: int
    edges: np.ndarray
    triangles: np.ndarray

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def q(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(u), int(v)): j for j, (u, v) in enumerate(self.edges)}

    def boundary_nodes(self) -> SignedIncidence:
        """B1, shape (n, m): column of edge (u, v) is -1 at u, +1 at v."""
        m = self.m
        rows = np.empty(2 * m, dtype=np.int64)
        cols = np.empty(2 * m, dtype=np.int64)
        signs = np.empty(2 * m, dtype=np.int64)
        for j, (u, v) in enumerate(self.edges):
            rows[2 * j : 2 * j + 2] = (u, v)
            cols[2 * j : 2 * j + 2] = j
            signs[2 * j : 2 * j + 2] = (-1, 1)
        return SignedIncidence(self.n, m, rows, cols, signs)

    def boundary_edges(self) -> SignedIncidence:
        """B2, shape (m, q): triangle (u, v, w) hits (v,w)+1, (u,w)-1, (u,v)+1."""
        q = self.q
        rows = np.empty(3 * q, dtype=np.int64)
        cols = np.empty(3 * q, dtype=np.int64)
        signs = np.empty(3 * q, dtype=np.int64)
        index = self.edge_index
        for t, (u, v, w) in enumerate(self.triangles):
            faces = ((v, w, 1), (u, w, -1), (u, v, 1))
            for k, (a, b, s) in enumerate(faces):
                rows[3 * t + k] = index[(int(a), int(b))]
                cols[3 * t + k] = t
                signs[3 * t + k] = s
        return SignedIncidence(self.m, q, rows, cols, signs)


def build_complex(graph: Graph) -> SimplicialComplex:
    """Clique complex of ``graph`` up to dimension 2."""
    return SimplicialComplex(
        n=graph.n, edges=graph.edges.copy(), triangles=_enumerate_triangles(graph)
    )


def sample_edges(graph: Graph, epsilon: float, seed: int) -> Graph:
    """Uniform random edge subset of size ceil(epsilon * m), without replacement.

    epsilon must lie in (0, 1]; epsilon = 1 returns the graph unchanged.
    The 1e-9 guard keeps ceil from overshooting when epsilon * m is an
    integer up to float rounding (0.2 * 100 must give exactly 20).
    """
    if not 0.0 < epsilon <= 1.0:
        raise ComplexError(f"epsilon must be in (0, 1], got {epsilon}")
    if epsilon == 1.0:
        return graph
    count = int(math.ceil(epsilon * graph.m - 1e-9))
    count = max(count, 1) if graph.m else 0
    rng = np.random.default_rng(seed)
    keep = rng.choice(graph.m, size=count, replace=False)
    return Graph(n=graph.n, edges=graph.edges[np.sort(keep)])


def load_edge_list(path) -> Graph:
    """Read a whitespace-separated edge list: two node ids per line.

    Node ids are zero-based ints; blank lines and lines starting with '#'
    are ignored; duplicates and reversed duplicates collapse.  Node count
    is max id + 1.
    """
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ComplexError(f"edge list not found: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ComplexError(
                f"{path}:{lineno}: expected two node ids, got {stripped!r}"
            )
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ComplexError(
                f"{path}:{lineno}: non-integer node id in {stripped!r}"
            ) from None
        if u < 0 or v < 0:
            raise ComplexError(f"{path}:{lineno}: negative node id in {stripped!r}")
        pairs.append((u, v))
    if not pairs:
        raise ComplexError(f"{path}: no edges found")
    n = int(max(max(u, v) for u, v in pairs)) + 1
    return Graph.from_edges(n, np.array(pairs, dtype=np.int64))


def save_edge_list(graph: Graph, path) -> None:
    lines = [f"{u} {v}" for u, v in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path, n_expected: int | None = None) -> np.ndarray:
    """Read a headerless CSV of node features, row i = node i, float64."""
    path = Path(path)
    if not path.exists():
        raise ComplexError(f"feature file not found: {path}")
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ComplexError(f"{path}: malformed feature CSV ({exc})") from None
    if n_expected is not None and x.shape[0] != n_expected:
        raise ComplexError(
            f"{path}: {x.shape[0]} feature rows for {n_expected} nodes"
        )
    return x


def save_features(x: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(x, dtype=np.float64), delimiter=",", fmt="%.10g")
