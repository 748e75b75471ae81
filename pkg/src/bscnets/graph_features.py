"""Classic node centralities used as feature vectors.

For datasets that ship no node attributes, each node gets a 4-column
feature row: degree, harmonic closeness, shortest-path betweenness, and
PageRank.  All four are exact (no sampling): betweenness uses Brandes'
accumulation over BFS shortest-path DAGs, closeness is the harmonic mean
so disconnected graphs stay finite, PageRank is power iteration run to a
tight residual.  Raw columns live on very different scales, so training
standardizes each column to zero mean and unit variance.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .complex_core import Graph

__all__ = [
    "degree_centrality",
    "harmonic_closeness",
    "betweenness_centrality",
    "pagerank",
    "centrality_features",
    "standardize_columns",
]


def degree_centrality(graph: Graph) -> np.ndarray:
    """Raw degree count per node."""
    return graph.degrees().astype(np.float64)


def _bfs_distances(adj: list[np.ndarray], source: int, n: int) -> np.ndarray:
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def harmonic_closeness(graph: Graph) -> np.ndarray:
    """Harmonic closeness: mean of 1/d(u, v) over v != u.

    Unreachable nodes contribute zero, so the score is well defined on
    disconnected graphs.  A single-node graph scores zero.
    """
    n = graph.n
    if n == 1:
        return np.zeros(1)
    adj = graph.neighbor_lists
    out = np.zeros(n)
    for u in range(n):
        dist = _bfs_distances(adj, u, n)
        reachable = dist > 0
        out[u] = (1.0 / dist[reachable]).sum() / (n - 1)
    return out


def betweenness_centrality(graph: Graph, normalized: bool = True) -> np.ndarray:
    """Exact shortest-path betweenness via Brandes' algorithm.

    The raw score of v counts, over unordered node pairs {s, t} with
    s != v != t, the fraction of shortest s-t paths passing through v.
    With ``normalized=True`` the count is divided by (n-1)(n-2)/2, the
    number of pairs, giving values in [0, 1].
    """
    n = graph.n
    adj = graph.neighbor_lists
    acc = np.zeros(n)
    for s in range(n):
        # single-source shortest-path DAG: order, predecessors, path counts
        stack: list[int] = []
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(stack):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                acc[w] += delta[w]
    acc /= 2.0  # each unordered pair was visited from both endpoints
    if normalized:
        pairs = (n - 1) * (n - 2) / 2.0
        if pairs > 0:
            acc /= pairs
    return acc


def pagerank(
    graph: Graph,
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """PageRank by power iteration; entries sum to 1.

    Rank mass of isolated (dangling) nodes is spread uniformly.  Runs
    until the l1 change per iteration drops below ``tol``.
    """
    n = graph.n
    deg = graph.degrees().astype(np.float64)
    dangling = deg == 0
    # column-stochastic transition: follow an edge with equal probability
    with np.errstate(divide="ignore"):
        inv_deg = np.where(dangling, 0.0, 1.0 / np.maximum(deg, 1.0))
    rank = np.full(n, 1.0 / n)
    adj = graph.adjacency
    for _ in range(max_iter):
        spread = rank * inv_deg
        flowed = adj @ spread
        flowed += rank[dangling].sum() / n  # dangling mass, uniform
        new = (1.0 - damping) / n + damping * flowed
        if np.abs(new - rank).sum() < tol:
            rank = new
            break
        rank = new
    return rank / rank.sum()


def centrality_features(graph: Graph) -> np.ndarray:
    """(n, 4) feature matrix: degree, closeness, betweenness, PageRank."""
    return np.column_stack(
        [
            degree_centrality(graph),
            harmonic_closeness(graph),
            betweenness_centrality(graph),
            pagerank(graph),
        ]
    )


def standardize_columns(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns; constant columns map to zero."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0, keepdims=True)
    std = x.std(axis=0, keepdims=True)
    safe = np.where(std < 1e-12, 1.0, std)
    out = (x - mean) / safe
    out[:, (std < 1e-12).ravel()] = 0.0
    return out
