"""Canonical on-disk dataset bundles: edges, features, and a stats digest.

A bundle directory holds `edges.txt` (whitespace pairs, '#' comments),
features as either `features.csv` (dense, comma-separated) or `features.npz`
(scipy sparse), and `stats.json` with the keys nodes/edges/triangles/features.
Loading re-derives every stat and refuses bundles whose stored stats disagree
with the files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse

from .complex_core import (
    ComplexError,
    Graph,
    build_complex,
    load_edge_list,
    load_features,
    save_edge_list,
    save_features,
)

STATS_KEYS = ("nodes", "edges", "triangles", "features")

#: features at least this empty are stored and trained sparse
SPARSITY_THRESHOLD = 0.9


class BundleError(ValueError):
    """Raised for missing bundle files or stats that contradict them."""


@dataclass
class Dataset:
    """A named graph with per-node features, ready for training."""

    name: str
    graph: Graph
    features: np.ndarray | scipy.sparse.csr_matrix

    def __post_init__(self):
        if self.features.shape[0] != self.graph.n:
            raise BundleError(
                f"feature rows ({self.features.shape[0]}) must match node "
                f"count ({self.graph.n})"
            )

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def stats(self) -> dict:
        complex_ = build_complex(self.graph)
        return {
            "nodes": self.graph.n,
            "edges": self.graph.m,
            "triangles": complex_.q,
            "features": self.feature_dim,
        }


def maybe_sparsify(features):
    """Convert dense features to CSR when they are mostly zeros."""
    if scipy.sparse.issparse(features):
        return features.tocsr()
    dense = np.asarray(features, dtype=np.float64)
    zero_fraction = 1.0 - np.count_nonzero(dense) / max(1, dense.size)
    if zero_fraction >= SPARSITY_THRESHOLD:
        return scipy.sparse.csr_matrix(dense)
    return dense


def save_bundle(dataset: Dataset, out_dir) -> dict:
    """Write edges, features, and stats; returns {logical name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out / "edges.txt", "stats": out / "stats.json"}
    save_edge_list(dataset.graph, paths["edges"])
    if scipy.sparse.issparse(dataset.features):
        paths["features"] = out / "features.npz"
        scipy.sparse.save_npz(paths["features"], dataset.features.tocsr())
    else:
        paths["features"] = out / "features.csv"
        save_features(dataset.features, paths["features"])
    stats = dataset.stats()
    paths["stats"].write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def load_bundle(bundle_dir, name: str | None = None) -> Dataset:
    """Read a bundle directory back, verifying its stats digest."""
    root = Path(bundle_dir)
    if not root.is_dir():
        raise BundleError(f"bundle directory not found: {root}")
    edges_path = root / "edges.txt"
    stats_path = root / "stats.json"
    if not edges_path.is_file():
        raise BundleError(f"bundle is missing {edges_path}")
    if not stats_path.is_file():
        raise BundleError(f"bundle is missing {stats_path}")

    try:
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"unreadable stats file {stats_path}: {exc}") from exc
    missing = [k for k in STATS_KEYS if k not in stats]
    if missing:
        raise BundleError(
            f"{stats_path} lacks required keys: {', '.join(missing)}"
        )

    try:
        graph = load_edge_list(edges_path)
    except ComplexError as exc:
        raise BundleError(str(exc)) from exc
    stated_n = int(stats["nodes"])
    if stated_n > graph.n:  # trailing nodes may be isolated
        graph = Graph.from_edges(stated_n, graph.edges)

    dense_path = root / "features.csv"
    sparse_path = root / "features.npz"
    if sparse_path.is_file():
        features = scipy.sparse.load_npz(sparse_path).tocsr()
    elif dense_path.is_file():
        features = load_features(dense_path, n_expected=graph.n)
    else:
        raise BundleError(
            f"bundle has neither {dense_path.name} nor {sparse_path.name}"
        )

    dataset = Dataset(
        name=name or root.name, graph=graph, features=features
    )
    actual = dataset.stats()
    mismatches = [
        f"{key}: stats say {stats[key]}, files say {actual[key]}"
        for key in STATS_KEYS
        if int(stats[key]) != actual[key]
    ]
    if mismatches:
        raise BundleError(
            f"stats digest disagrees with bundle content ({'; '.join(mismatches)})"
        )
    return dataset
