"""Seeded synthetic dataset generators at the scales the pipeline targets.

Four regimes: a small multi-community meeting graph with centrality
features, a large feature-inheriting tree, a clustered contact network
with centrality features, and a citation-scale sparse binary-feature
graph.  Every generator is deterministic given its seed and returns a
Dataset.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .bundle import Dataset
from .complex_core import Graph
from .graph_features import centrality_features, standardize_columns


def _block_edges(rng, sizes, p_in, p_out):
    """Bernoulli edges with per-community inner densities."""
    n = int(np.sum(sizes))
    community = np.repeat(np.arange(len(sizes)), sizes)
    uu, vv = np.triu_indices(n, k=1)
    same = community[uu] == community[vv]
    prob = np.where(same, np.asarray(p_in)[community[uu]], p_out)
    keep = rng.random(prob.shape) < prob
    return n, np.column_stack([uu[keep], vv[keep]])


def meetings_like(seed: int = 0) -> Dataset:
    """~101 nodes in five communities of uneven density; the four node
    centralities (standardized) are the only features."""
    rng = np.random.default_rng(seed)
    sizes = (25, 22, 20, 18, 16)
    p_in = (0.42, 0.36, 0.30, 0.26, 0.22)
    n, edges = _block_edges(rng, sizes, p_in, p_out=0.012)
    graph = Graph.from_edges(n, edges)
    features = standardize_columns(centrality_features(graph))
    return Dataset("meetings_like", graph, features)


def disease_tree(
    seed: int = 0, n: int = 1044, feature_dim: int = 16, step_scale: float = 0.35
) -> Dataset:
    """Random recursive tree whose features random-walk down the branches,
    so linked nodes stay feature-close while distant nodes drift apart."""
    rng = np.random.default_rng(seed)
    parents = np.array([rng.integers(0, i) for i in range(1, n)])
    features = np.empty((n, feature_dim))
    features[0] = rng.normal(size=feature_dim)
    steps = step_scale * rng.normal(size=(n - 1, feature_dim))
    for child in range(1, n):
        features[child] = features[parents[child - 1]] + steps[child - 1]
    edges = np.column_stack([parents, np.arange(1, n)])
    graph = Graph.from_edges(n, edges)
    return Dataset("disease_tree", graph, standardize_columns(features))


def contact_graph(
    seed: int = 0,
    n: int = 300,
    groups: int = 15,
    p_in: float = 0.5,
    p_out: float = 0.0035,
) -> Dataset:
    """Clustered contact network: dense contact groups (classrooms,
    households) joined by sparse cross-group links, the shape real
    proximity data takes.  Features are the four standardized node
    centralities, the same treatment prepared contact datasets get."""
    if groups < 2 or groups > n:
        raise ValueError(f"groups must lie in [2, n], got {groups}")
    rng = np.random.default_rng(seed)
    base, extra = divmod(n, groups)
    sizes = np.full(groups, base)
    sizes[:extra] += 1
    _, edges = _block_edges(rng, sizes, np.full(groups, p_in), p_out)
    graph = Graph.from_edges(n, edges)
    features = standardize_columns(centrality_features(graph))
    return Dataset("contact_graph", graph, features)


def citation_like(
    seed: int = 0,
    n: int = 2708,
    target_edges: int = 5429,
    feature_dim: int = 1433,
    communities: int = 7,
    subtopics: int = 4,
    words_per_community: int = 120,
    words_per_node: int = 20,
) -> Dataset:
    """Citation-scale surrogate with two-level topic structure.

    Papers cluster hierarchically: each community splits into subtopics,
    most citations stay inside a subtopic, most of the rest inside the
    community, and degrees are heavy-tailed through gamma node weights.
    The bag-of-words features mirror the hierarchy: every node draws most
    of its words from its subtopic's vocabulary, some from the wider
    community vocabulary, and a few from the whole dictionary, so both
    the graph and the features resolve structure below community level.
    """
    rng = np.random.default_rng(seed)
    community = rng.integers(0, communities, size=n)
    subtopic = rng.integers(0, subtopics, size=n)
    block = community * subtopics + subtopic
    weight = rng.gamma(shape=1.2, scale=1.0, size=n) + 0.05

    def weighted_members(labels, count):
        members, probabilities = [], []
        for value in range(count):
            idx = np.flatnonzero(labels == value)
            members.append(idx)
            if idx.size:
                w = weight[idx]
                probabilities.append(w / w.sum())
            else:
                probabilities.append(np.empty(0))
        return members, probabilities

    community_members, community_p = weighted_members(community, communities)
    block_members, block_p = weighted_members(block, communities * subtopics)
    community_mass = np.array(
        [max(len(m), 1) for m in community_members], dtype=np.float64
    )
    community_mass /= community_mass.sum()
    block_mass = np.array([max(len(m), 1) for m in block_members], dtype=np.float64)
    block_mass /= block_mass.sum()

    def draw_pair(members, probabilities, mass):
        group = int(rng.choice(len(members), p=mass))
        pool, p = members[group], probabilities[group]
        if pool.size < 2:
            return int(rng.integers(0, n)), int(rng.integers(0, n))
        return int(rng.choice(pool, p=p)), int(rng.choice(pool, p=p))

    edge_set: set[tuple[int, int]] = set()
    while len(edge_set) < target_edges:
        roll = rng.random()
        if roll < 0.70:
            u, v = draw_pair(block_members, block_p, block_mass)
        elif roll < 0.95:
            u, v = draw_pair(community_members, community_p, community_mass)
        else:
            u, v = int(rng.integers(0, n)), int(rng.integers(0, n))
        if u != v:
            edge_set.add((min(u, v), max(u, v)))
    graph = Graph.from_edges(n, sorted(edge_set))

    community_vocab = [
        rng.choice(feature_dim, size=min(words_per_community, feature_dim),
                   replace=False)
        for _ in range(communities)
    ]
    pool_size = max(1, min(words_per_community, feature_dim) // subtopics)
    subtopic_vocab = [
        [rng.choice(vocab, size=pool_size, replace=False) for _ in range(subtopics)]
        for vocab in community_vocab
    ]

    def sample_words(pool, count):
        if count <= 0:
            return np.empty(0, dtype=np.int64)
        return rng.choice(pool, size=count, replace=count > pool.size)

    rows, cols = [], []
    k_sub = int(round(0.60 * words_per_node))
    k_comm = int(round(0.25 * words_per_node))
    k_any = words_per_node - k_sub - k_comm
    for node in range(n):
        words = np.concatenate([
            sample_words(subtopic_vocab[community[node]][subtopic[node]], k_sub),
            sample_words(community_vocab[community[node]], k_comm),
            rng.integers(0, feature_dim, size=k_any),
        ])
        words = np.unique(words)
        rows.append(np.full(words.shape, node))
        cols.append(words)
    features = scipy.sparse.csr_matrix(
        (
            np.ones(sum(len(c) for c in cols)),
            (np.concatenate(rows), np.concatenate(cols)),
        ),
        shape=(n, feature_dim),
    )
    return Dataset("citation_like", graph, features)


GENERATORS = {
    "meetings_like": meetings_like,
    "disease_tree": disease_tree,
    "contact_graph": contact_graph,
    "citation_like": citation_like,
}
