"""Acceptance gate: eight checks, one test per check, run in order.

Each test verifies one shipping requirement end to end at its stated
tolerance, so ``pytest -v tests/test_acceptance.py`` prints one pass or
fail line per requirement:

1.  exact operator identities (graph Laplacian, boundary composition,
    filled-triangle spectrum, symmetry, positive semidefiniteness,
    walk-power decomposition, block PSD dual-route agreement);
2.  finite-difference gradient checks for every autodiff op and for the
    full model loss on a small complex;
3.  row-stochastic normalization of the adaptive mixing operator and
    operator-level equality for each ablation;
4.  link prediction on the two small synthetic regimes: under a minute
    per training run, the full model beating its plain-Laplacian
    ablation on mean test AUC over five seeds, and at least 0.85 AUC on
    the synthetic tree;
5.  citation-benchmark AUC: at least 0.919 mean over five seeds within
    fifteen minutes (skips loudly when no local copy of the benchmark
    exists, with an unconditionally-run surrogate at the same bar);
6.  rank-statistic AUC equal to exhaustive pair counting on a thousand
    random score sets;
7.  contagion-simulation invariants: conservation, monotone S and R,
    frozen S at zero infection rate, mitigation never raising the peak,
    and single-step transition frequencies within one percent of closed
    form over a hundred thousand trials;
8.  epidemic-curve reconstruction: rebuilding the perturbed contact
    network with the full scorer stays at least as close to the true
    curve as the plain-Laplacian scorer, averaged over five seeds.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import central_difference, random_graph, relative_error

from bscnets import autodiff as ad
from bscnets.bundle import load_bundle
from bscnets.complex_core import Graph, build_complex
from bscnets.epidemic import (
    SeirConfig,
    apply_mitigation,
    infected_fraction,
    run_epidemic_pipeline,
    simulate_seir,
)
from bscnets.hodge_operators import (
    OperatorMatrix,
    check_psd_schur,
    hodge_k,
    power_operator,
)
from bscnets.model import BscnetsModel, ModelConfig, assemble_ahlb
from bscnets.synthetic import (
    citation_like,
    contact_graph,
    disease_tree,
    meetings_like,
)
from bscnets.training import (
    TrainConfig,
    roc_auc,
    run_experiment,
    split_edges,
    train,
)


def _toy_graph() -> Graph:
    """Six nodes, eight edges, one filled triangle."""
    return Graph.from_edges(
        6, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 5)]
    )


def _toy_config(**overrides) -> ModelConfig:
    base = dict(hidden_pair=3, hidden_conv=4, conv_out=2, embed_dim=2,
                walk_length=2, relation="embedded", dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def test_structural_identities():
    """Operator identities hold exactly or to 1e-8 on random complexes."""
    # graph Laplacian from the node-level operator: L0 = D - A
    for seed in range(20):
        g = random_graph(10, 0.35, seed=seed)
        if g.m == 0:
            continue
        complex_ = build_complex(g)
        l0 = hodge_k(None, complex_.boundary_nodes()).values
        adjacency = np.asarray(g.adjacency, dtype=np.float64)
        laplacian = np.diag(adjacency.sum(axis=1)) - adjacency
        assert np.array_equal(l0, laplacian)

    # boundary-of-boundary vanishes exactly on triangle-rich complexes
    checked_composition = 0
    for seed in range(30):
        complex_ = build_complex(random_graph(12, 0.5, seed=100 + seed))
        if complex_.q == 0:
            continue
        b1 = complex_.boundary_nodes().to_sparse()
        b2 = complex_.boundary_edges().to_sparse()
        product = (b1 @ b2).toarray()
        assert np.array_equal(product, np.zeros_like(product))
        checked_composition += 1
    assert checked_composition >= 10

    # filled triangle: every edge sees full up- and down-curvature
    k3 = build_complex(Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)]))
    l1_k3 = hodge_k(k3.boundary_nodes(), k3.boundary_edges()).values
    assert np.array_equal(l1_k3, 3.0 * np.eye(3))

    # symmetry and positive semidefiniteness across 100 random complexes
    for seed in range(100):
        n = 4 + seed % 12  # up to 15 nodes
        complex_ = build_complex(random_graph(n, 0.4, seed=200 + seed))
        if complex_.m == 0:
            continue
        operators = [hodge_k(None, complex_.boundary_nodes())]
        b2 = complex_.boundary_edges() if complex_.q else None
        operators.append(hodge_k(complex_.boundary_nodes(), b2))
        if b2 is not None:
            operators.append(hodge_k(b2, None))
        for op in operators:
            assert np.array_equal(op.values, op.values.T)
            scale = max(1.0, np.abs(op.values).max())
            assert np.linalg.eigvalsh(op.values).min() >= -1e-8 * scale

    # walk powers split into down- and up-parts for r = 1..4
    checked_power = 0
    for seed in range(20):
        complex_ = build_complex(random_graph(10, 0.5, seed=300 + seed))
        if complex_.q == 0:
            continue
        l1 = hodge_k(complex_.boundary_nodes(), complex_.boundary_edges())
        for r in range(1, 5):
            powered = power_operator(l1, r, tol=1e-8)  # raises on mismatch
            direct = np.linalg.matrix_power(l1.values, r)
            scale = max(1.0, np.abs(direct).max())
            assert np.abs(powered.down + powered.up - direct).max() <= 1e-8 * scale
        checked_power += 1
    assert checked_power >= 10

    # block PSD test: shortcut verdict equals assembled-eigenvalue verdict
    rng = np.random.default_rng(7)
    verdicts = set()
    for case in range(100):
        d1, d2 = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        g = rng.normal(size=(d1 + d2, d1 + d2))
        matrix = g @ g.T
        if case % 2:
            matrix = matrix - (0.5 + rng.random()) * np.eye(d1 + d2)
        report = check_psd_schur(
            matrix[:d1, :d1], matrix[:d1, d1:], matrix[d1:, d1:]
        )
        assert report.agree
        verdicts.add(report.direct_verdict)
    assert verdicts == {True, False}


def test_gradient_checks():
    """Every autodiff op and the full loss pass central finite differences
    (relative error 1e-4, or 1e-3 when softmax is in the chain)."""
    rng = np.random.default_rng(3)

    def check(builder, arrays, tol=1e-4, h=1e-5):
        def run(params, want_grads=False):
            tape = ad.Tape()
            tensors = [tape.variable(p) for p in params]
            out = builder(tape, tensors)
            loss = out if out.shape == (1, 1) else ad.total_sum(out)
            if not want_grads:
                return float(loss.values[0, 0])
            tape.backward(loss)
            return [t.grad.copy() for t in tensors]

        auto = run(arrays, want_grads=True)
        fd = central_difference(lambda ps: run(ps), arrays, h=h)
        for a, f in zip(auto, fd):
            assert relative_error(a, f) <= tol

    a34 = rng.normal(size=(3, 4))
    a43 = rng.normal(size=(4, 3))
    b34 = rng.normal(size=(3, 4))
    const = rng.normal(size=(5, 3))
    away_from_kink = a34 + 0.2 * np.sign(a34)

    check(lambda t, p: ad.matmul(p[0], p[1]), [a34.copy(), a43.copy()])
    check(lambda t, p: ad.left_const_matmul(const, p[0]), [a34.copy()])
    check(lambda t, p: ad.add(p[0], p[1]), [a34.copy(), b34.copy()])
    check(lambda t, p: ad.sub(p[0], p[1]), [a34.copy(), b34.copy()])
    check(lambda t, p: ad.add_row_bias(p[0], p[1]),
          [a34.copy(), rng.normal(size=(1, 4))])
    check(lambda t, p: ad.scale(p[0], -1.7), [a34.copy()])
    check(lambda t, p: ad.elementwise_square(p[0]), [a34.copy()])
    check(lambda t, p: ad.relu(p[0]), [away_from_kink.copy()])
    check(lambda t, p: ad.concat_cols(p[0], p[1]), [a34.copy(), b34.copy()])
    check(lambda t, p: ad.concat_rows(p[0], p[1]), [a34.copy(), b34.copy()])
    check(lambda t, p: ad.transpose(p[0]), [a34.copy()])
    check(lambda t, p: ad.gather_rows(p[0], np.array([2, 0, 2, 1])),
          [a34.copy()])
    check(lambda t, p: ad.dropout(p[0], 0.4, np.random.default_rng(11)),
          [a34.copy()])
    check(lambda t, p: ad.total_sum(p[0]), [a34.copy()])
    check(lambda t, p: ad.fermi_dirac(p[0], delta=2.0, eta=1.0),
          [np.abs(a34) + 1.0])
    labels = (rng.random((6, 1)) < 0.5).astype(float)
    check(lambda t, p: ad.bce_with_logistic(p[0], labels, 2.0, 1.0),
          [np.abs(rng.normal(size=(6, 1))) + 0.3])
    # project softmax rows onto fixed weights: plain summation has an
    # identically-zero gradient (rows always sum to one)
    softmax_weights = rng.normal(size=(4, 1))
    check(lambda t, p: ad.matmul(ad.row_softmax(p[0]),
                                 ad.constant(softmax_weights)),
          [a34.copy()], tol=1e-3)

    # full model loss on a six-node complex, softmax in the chain
    model = BscnetsModel(_toy_config(), "full", _toy_graph(),
                         np.random.default_rng(3).normal(size=(6, 3)), seed=11)
    # positive score weights and bias hold the final ReLU off its kink
    model.params["score_weight"] = np.abs(model.params["score_weight"]) + 0.1
    model.params["score_bias"] = np.full((1, 1), 0.05)
    pos = np.array([[0, 1], [3, 4], [2, 4]])
    neg = np.array([[0, 5], [1, 4], [0, 3]])

    tape, loss, wrapped = model.loss(pos, neg, train=True,
                                     rng=np.random.default_rng(0))
    z, h, p_eval = model.embeddings()
    dist = model.pair_distances(z, h, np.vstack([pos, neg]), p_eval)
    assert dist.values.min() > 1e-3
    tape.backward(loss)
    auto = {k: wrapped[k].grad.copy() for k in model.params}

    names = list(model.params)
    arrays = [model.params[k] for k in names]

    def full_loss(_params):
        _, value, _ = model.loss(pos, neg, train=True,
                                 rng=np.random.default_rng(0))
        return float(value.values[0, 0])

    fd = central_difference(full_loss, arrays, h=1e-5)
    for name, fd_grad in zip(names, fd):
        assert relative_error(auto[name], fd_grad) <= 1e-3, name


def test_operator_normalization_and_ablations():
    """The mixing operator is row-stochastic to 1e-8, and each ablation
    changes exactly its intended term (verified as operator equality)."""
    rng = np.random.default_rng(5)
    for seed in range(10):
        complex_ = build_complex(random_graph(9, 0.5, seed=400 + seed))
        if complex_.q == 0 or complex_.m < 3:
            continue
        l1 = hodge_k(complex_.boundary_nodes(), complex_.boundary_edges())
        down = OperatorMatrix(values=l1.down, kind="part")
        up = OperatorMatrix(values=l1.up, kind="part")
        for walk in (1, 2, 3):
            plain = assemble_ahlb(down, up, walk, relation="inner_product")
            embedded = assemble_ahlb(
                down, up, walk, relation="embedded",
                embed_down=rng.normal(size=(3, l1.dim)),
                embed_up=rng.normal(size=(3, l1.dim)),
            )
            for op in (plain, embedded):
                assert np.abs(op.values.sum(axis=1) - 1.0).max() <= 1e-8
                assert op.values.min() >= 0.0

    x = np.random.default_rng(1).normal(size=(6, 3))

    # walk ablation: diagonal blocks use power one regardless of config
    no_walk = BscnetsModel(_toy_config(walk_length=3), "no_random_walk",
                           _toy_graph(), x, seed=2)
    op = no_walk._edge_operator
    assert np.array_equal(no_walk.bundle.down_pow, op.down)
    assert np.array_equal(no_walk.bundle.up_pow, op.up)

    # relation ablation: coupling zeroed before rectify + row-softmax
    no_rel = BscnetsModel(_toy_config(), "no_relation", _toy_graph(), x, seed=2)
    op = no_rel._edge_operator
    m = op.dim
    raw = np.block([
        [np.linalg.matrix_power(op.down, 2), np.zeros((m, m))],
        [np.zeros((m, m)), np.linalg.matrix_power(op.up, 2)],
    ])
    rectified = np.maximum(raw, 0.0)
    expect = np.exp(rectified - rectified.max(axis=1, keepdims=True))
    expect /= expect.sum(axis=1, keepdims=True)
    assert np.allclose(no_rel.bundle.static_operator, expect, atol=1e-12)
    assert "relation_embed_down" not in no_rel.params

    # substitution ablation: plain edge Laplacian, rectified + row-softmax
    only = BscnetsModel(_toy_config(), "only_L1", _toy_graph(), x, seed=2)
    op = only._edge_operator
    rectified = np.maximum(op.values, 0.0)
    expect = np.exp(rectified - rectified.max(axis=1, keepdims=True))
    expect /= expect.sum(axis=1, keepdims=True)
    assert np.allclose(only.bundle.static_operator, expect, atol=1e-12)


SMALL_MODEL = dict(hidden_pair=16, hidden_conv=64, conv_out=16, embed_dim=16,
                   walk_length=2, dropout=0.2, epsilon=0.3)
SMALL_TRAIN = dict(learning_rate=0.01, max_epochs=200, patience=40,
                   runs=5, seed=11)


def test_small_dataset_link_prediction():
    """On the two small regimes every full training run finishes inside a
    minute, the full model beats its plain-Laplacian ablation on mean
    test AUC over five seeds, and the tree stays at or above 0.85."""
    model_config = ModelConfig(**SMALL_MODEL)
    train_config = TrainConfig(**SMALL_TRAIN)
    means = {}
    for dataset in (meetings_like(seed=0), disease_tree(seed=0)):
        split = split_edges(dataset.graph, train_config.seed)
        start = time.monotonic()
        result = train(dataset.graph, dataset.features, split,
                       model_config, train_config, seed=train_config.seed + 1)
        single_run = time.monotonic() - start
        assert single_run < 60.0, (
            f"{dataset.name}: full training took {single_run:.1f}s"
        )
        assert result.epochs_run >= 1

        report = run_experiment(dataset, model_config, train_config,
                                variants=("full", "only_L1"))
        full_mean = report["mean_auc"]
        only_mean = report["ablation"]["only_L1"]["mean_auc"]
        assert full_mean > only_mean, (
            f"{dataset.name}: full {full_mean:.4f} vs plain {only_mean:.4f}"
        )
        means[dataset.name] = (full_mean, only_mean)
    assert means["disease_tree"][0] >= 0.85


CITATION_MODEL = dict(hidden_pair=16, hidden_conv=128, conv_out=16,
                      embed_dim=16, walk_length=2, dropout=0.1, epsilon=0.1)
CITATION_TRAIN = dict(learning_rate=0.005, max_epochs=300, patience=60,
                      runs=5, seed=21)


def _citation_experiment(dataset):
    start = time.monotonic()
    report = run_experiment(dataset, ModelConfig(**CITATION_MODEL),
                            TrainConfig(**CITATION_TRAIN))
    elapsed = time.monotonic() - start
    return report, elapsed


def test_citation_benchmark_when_available():
    """Mean test AUC at least 0.919 over five seeds in under fifteen
    minutes on the real citation benchmark; skips when no local copy of
    the dataset exists in this offline environment."""
    root = Path(os.environ.get("BSCNETS_DATA", "data"))
    bundle_dir = root / "cora"
    if not (bundle_dir / "edges.txt").is_file():
        pytest.skip(
            f"citation benchmark not found at {bundle_dir} (need a bundle "
            "with edges.txt, features.csv or features.npz, and stats.json; "
            "set BSCNETS_DATA to its parent directory); the surrogate test "
            "below enforces the same thresholds unconditionally"
        )
    report, elapsed = _citation_experiment(load_bundle(bundle_dir))
    assert elapsed < 900.0, f"five runs took {elapsed:.0f}s"
    assert report["mean_auc"] >= 0.919, f"mean AUC {report['mean_auc']:.4f}"


def test_citation_scale_surrogate():
    """The same thresholds on a generated dataset with the benchmark's
    node, edge, and vocabulary counts: mean AUC at least 0.919 over five
    seeds in under fifteen minutes."""
    dataset = citation_like(seed=0)
    assert (dataset.graph.n, dataset.graph.m) == (2708, 5429)
    assert dataset.features.shape[1] == 1433
    report, elapsed = _citation_experiment(dataset)
    assert elapsed < 900.0, f"five runs took {elapsed:.0f}s"
    assert report["mean_auc"] >= 0.919, f"mean AUC {report['mean_auc']:.4f}"


def test_auc_matches_exhaustive_counting():
    """Rank-statistic AUC equals brute-force pair counting (ties one half)
    on a thousand random score sets, exactly."""
    rng = np.random.default_rng(0)
    for case in range(1000):
        n_pos = int(rng.integers(1, 30))
        n_neg = int(rng.integers(1, 30))
        if case % 2:
            pos = rng.integers(0, 8, size=n_pos) / 4.0  # frequent ties
            neg = rng.integers(0, 8, size=n_neg) / 4.0
        else:
            pos = rng.normal(size=n_pos)
            neg = rng.normal(size=n_neg)
        wins = (pos[:, None] > neg[None, :]).sum()
        ties = (pos[:, None] == neg[None, :]).sum()
        counted = (wins + 0.5 * ties) / (n_pos * n_neg)
        assert roc_auc(pos, neg) == counted


def test_seir_properties():
    """Per-trial conservation and monotone S and R, frozen S at zero
    transmission, mitigation never raising the peak, and single-step
    frequencies within one percent of closed form over 1e5 trials."""
    graph = meetings_like(seed=0).graph
    config = SeirConfig(beta=0.05, alpha=0.2, gamma=0.05, days=40, trials=1)
    for trial_seed in range(30):
        curve = simulate_seir(graph, config, seed=trial_seed)
        assert np.allclose(curve.sum(axis=1), 1.0, atol=1e-9)
        s, r = curve[:, 0], curve[:, 3]
        assert np.all(np.diff(s) <= 1e-12)
        assert np.all(np.diff(r) >= -1e-12)

    frozen = simulate_seir(
        graph, SeirConfig(beta=0.0, alpha=0.2, gamma=0.05, days=30, trials=5),
        seed=3,
    )
    assert np.ptp(frozen[:, 0]) == 0.0

    mitigation_config = SeirConfig(beta=0.05, alpha=0.2, gamma=0.02,
                                   days=60, trials=50)
    for test_graph in (graph, contact_graph(seed=3, n=120, groups=6).graph):
        base = simulate_seir(test_graph, mitigation_config, seed=9)
        mitigated_graph = apply_mitigation(test_graph, "betweenness", 0.2).graph
        mitigated = simulate_seir(mitigated_graph, mitigation_config, seed=9)
        assert infected_fraction(mitigated).max() <= infected_fraction(base).max()

    # one synchronous step from a star centre: closed-form frequencies
    star = Graph.from_edges(11, [(0, leaf) for leaf in range(1, 11)])
    step = simulate_seir(
        star,
        SeirConfig(beta=0.3, alpha=0.25, gamma=0.2, days=1, trials=100_000,
                   initial_infected=[0]),
        seed=5,
    )
    expected = np.array([10 * 0.7, 10 * 0.3, 0.8, 0.2]) / 11.0
    relative = np.abs(step[0] - expected) / expected
    assert relative.max() < 0.01, f"relative errors {relative}"


def test_epidemic_reconstruction_fidelity():
    """Rebuilding a 20%-perturbed 300-node contact network from the full
    scorer yields an epidemic curve at least as close to the true curve
    (mean L1 over five pipeline seeds) as the plain-Laplacian scorer."""
    dataset = contact_graph(seed=0)
    assert dataset.graph.n == 300
    model_config = ModelConfig(hidden_pair=16, hidden_conv=64, conv_out=16,
                               embed_dim=16, walk_length=2, dropout=0.0,
                               epsilon=0.5)
    train_config = TrainConfig(learning_rate=0.008, max_epochs=300,
                               patience=80, seed=0)
    seir_config = SeirConfig(beta=0.05, alpha=0.2, gamma=0.02,
                             days=80, trials=60)
    distances = {"full": [], "only_L1": []}
    for seed in (31, 32, 33, 34, 35):
        for variant in distances:
            report, _ = run_epidemic_pipeline(
                dataset, model_config, train_config, seir_config,
                perturbation=0.2, strategy="none", seed=seed, variant=variant,
            )
            distances[variant].append(
                report["comparison"]["model"]["l1_distance"]
            )
    full_mean = float(np.mean(distances["full"]))
    only_mean = float(np.mean(distances["only_L1"]))
    assert full_mean <= only_mean, (
        f"full scorer mean L1 {full_mean:.5f} vs plain {only_mean:.5f}"
    )
