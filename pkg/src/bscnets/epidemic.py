"""SEIR contagion on original, perturbed, and reconstructed networks.

Discrete daily steps with synchronous updates: a susceptible node with k
infectious neighbors turns exposed with probability 1 - (1-beta)^k, exposed
turns infectious with probability alpha, infectious recovers with
probability gamma.  Curves average `trials` independent runs whose seeds
derive from the master seed by counter, and report per-day compartment
fractions for days 1..days.  The "infected" series used by comparisons is
cumulative: the I and R compartments together.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .complex_core import Graph
from .graph_features import betweenness_centrality, degree_centrality
from .training import sample_negatives, split_edges, roc_auc, train

S_STATE, E_STATE, I_STATE, R_STATE = 0, 1, 2, 3

MITIGATION_STRATEGIES = ("betweenness", "degree")
CHECKPOINT_DAYS = (30, 60, 90, 120, 180)
CURVE_HEADER = "day,S,E,I,R"


class EpidemicError(ValueError):
    """Raised for invalid epidemic configs, graphs, or score files."""


@dataclass
class SeirConfig:
    """Rates and schedule of the SEIR process.

    initial_infected: None seeds 1% of nodes (at least one) uniformly per
    trial; an int seeds that many uniformly per trial; a sequence of node
    ids fixes the seeds across trials.
    """

    beta: float = 0.01
    alpha: float = 0.1
    gamma: float = 0.005
    days: int = 180
    trials: int = 50
    initial_infected: object = None

    def validation_errors(self) -> list[str]:
        errors = []
        for name in ("beta", "alpha", "gamma"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"{name} must lie in [0, 1], got {value}")
        if self.days < 1:
            errors.append(f"days must be >= 1, got {self.days}")
        if self.trials < 1:
            errors.append(f"trials must be >= 1, got {self.trials}")
        if isinstance(self.initial_infected, (int, np.integer)):
            if self.initial_infected < 1:
                errors.append(
                    f"initial_infected count must be >= 1, got {self.initial_infected}"
                )
        return errors

    def validate(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise EpidemicError("; ".join(errors))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if isinstance(out["initial_infected"], np.ndarray):
            out["initial_infected"] = out["initial_infected"].tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SeirConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise EpidemicError(f"unknown SEIR settings: {', '.join(unknown)}")
        return cls(**data)


def trial_seeds(seed: int, trials: int) -> list[tuple[int, int]]:
    """Counter-derived per-trial seeds, recorded verbatim in manifests."""
    return [(int(seed), trial) for trial in range(trials)]


def _initial_nodes(config: SeirConfig, n: int, rng: np.random.Generator):
    spec = config.initial_infected
    if spec is None:
        count = max(1, int(round(0.01 * n)))
        return rng.choice(n, size=count, replace=False)
    if isinstance(spec, (int, np.integer)):
        if spec > n:
            raise EpidemicError(f"cannot infect {spec} of {n} nodes")
        return rng.choice(n, size=int(spec), replace=False)
    nodes = np.asarray(spec, dtype=np.int64).ravel()
    if nodes.size == 0 or nodes.size != np.unique(nodes).size:
        raise EpidemicError("initial_infected node list must be nonempty and unique")
    if nodes.min() < 0 or nodes.max() >= n:
        raise EpidemicError(f"initial_infected node out of range for n={n}")
    return nodes


def _single_trial(adjacency, config, rng, initial, blocked_mask):
    """(days, 4) integer compartment counts after each daily step."""
    n = adjacency.shape[0]
    states = np.full(n, S_STATE, dtype=np.int8)
    states[initial] = I_STATE
    counts = np.empty((config.days, 4), dtype=np.int64)
    one_minus_beta = 1.0 - config.beta
    for day in range(config.days):
        infectious = states == I_STATE
        if blocked_mask is not None:
            infectious = infectious & ~blocked_mask
        neighbor_counts = adjacency @ infectious.astype(np.float64)
        p_exposed = 1.0 - one_minus_beta**neighbor_counts
        s_to_e = (states == S_STATE) & (rng.random(n) < p_exposed)
        e_to_i = (states == E_STATE) & (rng.random(n) < config.alpha)
        i_to_r = (states == I_STATE) & (rng.random(n) < config.gamma)
        states[s_to_e] = E_STATE
        states[e_to_i] = I_STATE
        states[i_to_r] = R_STATE
        counts[day] = np.bincount(states, minlength=4)
    return counts


def simulate_seir(graph: Graph, config: SeirConfig, seed: int, blocked=()):
    """Trial-averaged per-day compartment fractions, shape (days, 4).

    Row t-1 is the state after day t.  Integer counts are summed across
    trials before the single division, so threaded and serial execution
    agree bitwise.
    """
    config.validate()
    if graph.n == 0:
        raise EpidemicError("cannot simulate on an empty graph")
    blocked = np.asarray(blocked, dtype=np.int64).ravel()
    blocked_mask = None
    if blocked.size:
        if blocked.min() < 0 or blocked.max() >= graph.n:
            raise EpidemicError(f"blocked node out of range for n={graph.n}")
        blocked_mask = np.zeros(graph.n, dtype=bool)
        blocked_mask[blocked] = True
    adjacency = graph.adjacency

    def one_trial(trial_seed):
        rng = np.random.default_rng(trial_seed)
        initial = _initial_nodes(config, graph.n, rng)
        return _single_trial(adjacency, config, rng, initial, blocked_mask)

    seeds = trial_seeds(seed, config.trials)
    workers = max(1, int(os.environ.get("BSCNETS_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one_trial, seeds))
    else:
        per_trial = [one_trial(s) for s in seeds]
    totals = np.sum(per_trial, axis=0)
    return totals / float(config.trials * graph.n)


def infected_fraction(curve: np.ndarray) -> np.ndarray:
    """Cumulative infected share per day: the I and R compartments."""
    curve = np.asarray(curve)
    return curve[:, I_STATE] + curve[:, R_STATE]


def perturb_edges(graph: Graph, rate: float = 0.20, seed: int = 0):
    """Replace ceil(rate * m) uniformly chosen edges with uniformly chosen
    non-edges; returns (perturbed graph, removed edges, added edges)."""
    if not 0.0 < rate < 1.0:
        raise EpidemicError(f"perturbation rate must lie in (0, 1), got {rate}")
    m = graph.m
    count = math.ceil(rate * m - 1e-9)
    rng = np.random.default_rng(seed)
    drop = rng.choice(m, size=count, replace=False)
    removed = graph.edges[np.sort(drop)]
    kept = np.delete(graph.edges, drop, axis=0)
    try:
        added = sample_negatives(graph, count, seed=rng)
    except ValueError as exc:
        raise EpidemicError(str(exc)) from exc
    added = added[np.lexsort((added[:, 1], added[:, 0]))]
    perturbed = Graph.from_edges(graph.n, np.vstack([kept, added]))
    return perturbed, removed, added


def reconstruct_network(graph: Graph, scorer) -> Graph:
    """Top-|E| scored pairs as the rebuilt network (|E| = graph.m).

    `scorer` is either a trained model exposing score_all_pairs or a
    (pairs, scores) array pair.  Ties break lexicographically, so the
    result is deterministic.
    """
    m = graph.m
    if hasattr(scorer, "score_all_pairs"):
        blocks, values = [], []
        for pair_block, score_block in scorer.score_all_pairs():
            blocks.append(pair_block)
            values.append(score_block)
        pairs = np.vstack(blocks)
        scores = np.concatenate(values)
    else:
        pairs, scores = scorer
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        scores = np.asarray(scores, dtype=np.float64).ravel()
        if pairs.shape[0] != scores.shape[0]:
            raise EpidemicError(
                f"{pairs.shape[0]} pairs but {scores.shape[0]} scores"
            )
        if pairs.size and (pairs.min() < 0 or pairs.max() >= graph.n):
            raise EpidemicError(f"scored pair out of range for n={graph.n}")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise EpidemicError("self-pairs cannot be scored as edges")
        pairs = np.sort(pairs, axis=1)
        codes = pairs[:, 0] * graph.n + pairs[:, 1]
        if np.unique(codes).size != codes.size:
            raise EpidemicError("duplicate pairs in score input")
    if pairs.shape[0] < m:
        raise EpidemicError(
            f"need at least {m} scored pairs to rebuild, got {pairs.shape[0]}"
        )
    order = np.lexsort((pairs[:, 1], pairs[:, 0], -scores))
    return Graph.from_edges(graph.n, pairs[order[:m]])


class MitigationResult(NamedTuple):
    graph: Graph
    removed_nodes: np.ndarray


def select_central_nodes(graph: Graph, strategy: str, fraction: float = 0.20):
    """Top ceil(fraction * n) nodes by the chosen centrality, ties broken
    by node index; returned sorted."""
    if strategy not in MITIGATION_STRATEGIES:
        raise EpidemicError(
            f"unknown strategy {strategy!r}; expected one of {MITIGATION_STRATEGIES}"
        )
    if not 0.0 < fraction < 1.0:
        raise EpidemicError(f"fraction must lie in (0, 1), got {fraction}")
    if strategy == "betweenness":
        scores = betweenness_centrality(graph)
    else:
        scores = degree_centrality(graph)
    count = math.ceil(fraction * graph.n - 1e-9)
    order = np.lexsort((np.arange(graph.n), -scores))
    return np.sort(order[:count])


def apply_mitigation(
    graph: Graph, strategy: str, fraction: float = 0.20, remove: bool = True
) -> MitigationResult:
    """Drop the most central nodes and their edges before simulation.

    With remove=False the topology is kept and the caller instead passes
    removed_nodes to simulate_seir as `blocked`, modeling nodes that stay
    present but cannot transmit.
    """
    nodes = select_central_nodes(graph, strategy, fraction)
    if not remove:
        return MitigationResult(graph, nodes)
    keep = np.setdiff1d(np.arange(graph.n), nodes)
    relabel = np.full(graph.n, -1, dtype=np.int64)
    relabel[keep] = np.arange(keep.size)
    edges = graph.edges
    mask = np.isin(edges[:, 0], keep) & np.isin(edges[:, 1], keep)
    new_edges = relabel[edges[mask]]
    return MitigationResult(Graph.from_edges(keep.size, new_edges), nodes)


def compare_curves(curve_a, curve_b) -> dict:
    """Peak gap, mean absolute daily gap, and checkpoint table of the
    cumulative infected fractions of two equal-length curves."""
    a = np.asarray(curve_a, dtype=np.float64)
    b = np.asarray(curve_b, dtype=np.float64)
    if a.shape != b.shape:
        raise EpidemicError(f"curve shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[1] != 4:
        raise EpidemicError(f"curves must be (days, 4) arrays, got {a.shape}")
    infected_a, infected_b = infected_fraction(a), infected_fraction(b)
    days = a.shape[0]
    checkpoints = [
        {
            "day": day,
            "a": float(infected_a[day - 1]),
            "b": float(infected_b[day - 1]),
            "diff": float(abs(infected_a[day - 1] - infected_b[day - 1])),
        }
        for day in CHECKPOINT_DAYS
        if day <= days
    ]
    return {
        "peak_diff": float(abs(infected_a.max() - infected_b.max())),
        "l1_distance": float(np.abs(infected_a - infected_b).mean()),
        "checkpoints": checkpoints,
    }


def save_curve(curve: np.ndarray, path) -> None:
    """CSV with header day,S,E,I,R; fractions at six decimal places."""
    curve = np.asarray(curve, dtype=np.float64)
    lines = [CURVE_HEADER]
    for index, row in enumerate(curve, start=1):
        lines.append(
            f"{index},{row[0]:.6f},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_curve(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise EpidemicError(f"curve file not found: {path}")
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise EpidemicError(f"{path}: expected header {CURVE_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise EpidemicError(f"{path}:{lineno}: expected 5 fields")
        try:
            day = int(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise EpidemicError(f"{path}:{lineno}: {exc}") from None
        if day != lineno - 1:
            raise EpidemicError(f"{path}:{lineno}: days must run 1..N in order")
        rows.append(values)
    return np.asarray(rows, dtype=np.float64)


def save_scores(pairs: np.ndarray, scores: np.ndarray, path) -> None:
    """Score-file lines "u v score" for external scorer interchange."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    lines = [f"{u} {v} {s:.10g}" for (u, v), s in zip(pairs, scores)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path):
    path = Path(path)
    if not path.is_file():
        raise EpidemicError(f"score file not found: {path}")
    pairs, scores = [], []
    for lineno, raw in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise EpidemicError(f"{path}:{lineno}: expected 'u v score'")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
            scores.append(float(parts[2]))
        except ValueError as exc:
            raise EpidemicError(f"{path}:{lineno}: {exc}") from None
    if not pairs:
        raise EpidemicError(f"{path}: no scored pairs")
    return np.asarray(pairs, dtype=np.int64), np.asarray(scores)


def run_epidemic_pipeline(
    dataset,
    model_config,
    train_config,
    seir_config: SeirConfig,
    perturbation: float = 0.20,
    strategy: str = "none",
    fraction: float = 0.20,
    seed: int = 0,
    variant: str = "full",
    external_scores=None,
):
    """Perturb, relearn, rebuild, and simulate; returns (report, curves).

    Curves: "base" on the original graph, "model" on the network rebuilt
    from the trained scorer, "external" likewise when a (pairs, scores)
    input is given.  A non-"none" strategy mitigates each network by its
    own centralities before simulation.
    """
    graph = dataset.graph
    if perturbation > 0:
        perturbed, removed, added = perturb_edges(graph, perturbation, seed)
    else:
        perturbed = graph
        removed = np.empty((0, 2), dtype=np.int64)
        added = np.empty((0, 2), dtype=np.int64)

    split = split_edges(perturbed, seed)
    result = train(
        perturbed, dataset.features, split, model_config, train_config,
        variant=variant, seed=seed,
    )
    test_auc = roc_auc(
        result.model.pair_probabilities(split.test_pos),
        result.model.pair_probabilities(split.test_neg),
    )
    graphs = {"base": graph, "model": reconstruct_network(perturbed, result.model)}
    if external_scores is not None:
        graphs["external"] = reconstruct_network(perturbed, external_scores)

    curves, mitigated = {}, {}
    for label, network in graphs.items():
        sim_graph = network
        if strategy != "none":
            outcome = apply_mitigation(network, strategy, fraction)
            sim_graph = outcome.graph
            mitigated[label] = [int(v) for v in outcome.removed_nodes]
        curves[label] = simulate_seir(sim_graph, seir_config, seed)

    def edge_codes(g):
        return set(g.edges[:, 0] * graph.n + g.edges[:, 1])

    original, rebuilt = edge_codes(graph), edge_codes(graphs["model"])
    removed_codes = set(removed[:, 0] * graph.n + removed[:, 1])
    report = {
        "seed": seed,
        "variant": variant,
        "perturbation": perturbation,
        "strategy": strategy,
        "mitigation_fraction": fraction if strategy != "none" else None,
        "test_auc": test_auc,
        "edges": {
            "original": graph.m,
            "perturbed": perturbed.m,
            "removed": int(removed.shape[0]),
            "added": int(added.shape[0]),
            "rebuilt_true": len(rebuilt & original),
            "recovered_removed": len(rebuilt & removed_codes),
        },
        "comparison": {
            label: compare_curves(curves["base"], curves[label])
            for label in curves
            if label != "base"
        },
        "seir": seir_config.to_dict(),
        "trial_seeds": [list(s) for s in trial_seeds(seed, seir_config.trials)],
    }
    if mitigated:
        report["mitigated_nodes"] = mitigated
    return report, curves
