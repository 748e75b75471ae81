"""Block simplicial complex network for link prediction.

The model scores node pairs with two complementary branches:

* a higher-order branch that mixes features through an adaptive block
  operator built from the edge Laplacian's down and up parts.  Each part
  is raised to a walk length r, the two powered blocks sit on the
  diagonal, and a learned relation couples them off-diagonally; the
  assembled block matrix is rectified and row-softmaxed into a
  row-stochastic mixing operator,
* a two-layer graph convolution over the renormalized adjacency.

Pair features are the squared coordinate differences of both branch
embeddings; a linear read-out maps them to a nonnegative distance and a
Fermi-Dirac unit turns distance into an edge probability.

Ablation variants: ``no_random_walk`` fixes the walk length to 1,
``no_relation`` zeroes the off-diagonal coupling before normalization,
``only_L1`` swaps the block operator for the rectified row-softmax of
the plain edge Laplacian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields

import numpy as np
from scipy.sparse import issparse

from . import autodiff as ad
from .complex_core import Graph, SimplicialComplex, build_complex, sample_edges
from .hodge_operators import (
    KIND_AHLB,
    KIND_AHLB_RAW,
    OperatorMatrix,
    Projector,
    hodge_k,
    normalized_graph_csr,
    power_operator,
    projector_top,
)

__all__ = [
    "ModelError",
    "ModelConfig",
    "VARIANTS",
    "BscnetsModel",
    "assemble_ahlb",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("full", "no_random_walk", "no_relation", "only_L1")
RELATIONS = ("embedded", "inner_product")

CHECKPOINT_MAGIC = b"BSCNETS-CKPT-1\n"


class ModelError(ValueError):
    """Raised for invalid configuration or malformed checkpoints."""


@dataclass
class ModelConfig:
    """Hyperparameters of the model.

    ``epsilon`` subsamples the training edges used to build the
    higher-order operator (1.0 keeps them all); the convolutional branch
    always sees the full training graph.
    """

    hidden_pair: int = 16        # higher-order embedding width (per node)
    hidden_conv: int = 128       # first convolution width
    conv_out: int = 16           # convolutional embedding width
    embed_dim: int = 16          # relation embedding rows
    walk_length: int = 2         # power applied to each Laplacian part
    relation: str = "embedded"   # "embedded" or "inner_product"
    dropout: float = 0.5
    weight_conv: float = 1.0     # pair-feature weight, convolutional branch
    weight_pair: float = 1.0     # pair-feature weight, higher-order branch
    threshold: float = 2.0       # Fermi-Dirac distance threshold
    temperature: float = 1.0     # Fermi-Dirac temperature
    epsilon: float = 1.0

    def validation_errors(self) -> list[str]:
        """All offending fields, one message each (empty list = valid)."""
        errors = []
        for name in ("hidden_pair", "hidden_conv", "conv_out", "embed_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                errors.append(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.walk_length, int) or self.walk_length < 1:
            errors.append(
                f"walk_length: must be a positive integer, got {self.walk_length!r}"
            )
        if self.relation not in RELATIONS:
            errors.append(
                f"relation: must be one of {RELATIONS}, got {self.relation!r}"
            )
        if not 0.0 <= self.dropout < 1.0:
            errors.append(f"dropout: must be in [0, 1), got {self.dropout!r}")
        for name in ("weight_conv", "weight_pair"):
            v = getattr(self, name)
            if not v > 0:
                errors.append(f"{name}: must be positive, got {v!r}")
        if not self.temperature > 0:
            errors.append(f"temperature: must be positive, got {self.temperature!r}")
        if not 0.0 < self.epsilon <= 1.0:
            errors.append(f"epsilon: must be in (0, 1], got {self.epsilon!r}")
        return errors

    def validate(self) -> "ModelConfig":
        errors = self.validation_errors()
        if errors:
            raise ModelError("invalid model config: " + "; ".join(errors))
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ModelError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**data).validate()


def _row_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def assemble_ahlb(
    op_down: OperatorMatrix,
    op_up: OperatorMatrix,
    walk_length: int,
    relation: str = "inner_product",
    projector: Projector | None = None,
    embed_down: np.ndarray | None = None,
    embed_up: np.ndarray | None = None,
    return_raw: bool = False,
) -> OperatorMatrix:
    """Reference (non-differentiable) assembly of the adaptive block operator.

    Diagonal blocks are the walk powers of the two operators; the
    off-diagonal relation between row i of the (projected) first block
    and row j of the second is either a plain inner product or an inner
    product of learned embeddings of the two rows.  The assembled matrix
    is rectified elementwise and row-softmaxed, making every row a
    probability distribution.
    """
    if relation not in RELATIONS:
        raise ModelError(f"relation must be one of {RELATIONS}, got {relation!r}")
    d1, d2 = op_down.dim, op_up.dim
    if projector is None:
        if d1 != d2:
            raise ModelError(
                f"block dims {d1} and {d2} differ; a projector is required"
            )
        projector = projector_top(op_down, d1)  # identity shortcut
    if projector.source_dim != d1 or projector.target_dim != d2:
        raise ModelError(
            f"projector maps {projector.source_dim} -> {projector.target_dim}, "
            f"blocks are {d1} and {d2}"
        )
    a_pow = np.linalg.matrix_power(op_down.values, walk_length)
    b_pow = np.linalg.matrix_power(op_up.values, walk_length)
    a_proj = projector.project_rows(a_pow)  # (d1, d2)
    if relation == "embedded":
        if embed_down is None or embed_up is None:
            raise ModelError("embedded relation needs embed_down and embed_up")
        coupling = (a_proj @ embed_down.T) @ (embed_up @ b_pow)  # (d1, d2)
    else:
        coupling = a_proj @ b_pow.T
    raw = np.block([[a_pow, coupling], [coupling.T, b_pow]])
    if return_raw:
        return OperatorMatrix(values=raw, kind=KIND_AHLB_RAW)
    return OperatorMatrix(
        values=_row_softmax_np(np.maximum(raw, 0.0)), kind=KIND_AHLB
    )


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class _OperatorBundle:
    """Constant matrices shared by every epoch of one training run."""

    down_pow: np.ndarray | None     # (d1, d1)
    up_pow: np.ndarray | None       # (d2, d2)
    down_proj: np.ndarray | None    # (d1, d2), powered down block after projection
    static_operator: np.ndarray | None  # precomputed mixing operator, if Theta-free
    operator_dim: int


class BscnetsModel:
    """Trainable scorer binding a config, a variant, data, and parameters.

    ``graph`` must contain only training-split edges; the higher-order
    operator is built from an epsilon-subsample of those edges, the
    convolution from all of them.  ``features`` may be a dense (n, d)
    array or a scipy sparse matrix.
    """

    def __init__(
        self,
        config: ModelConfig,
        variant: str,
        graph: Graph,
        features,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ModelError(f"variant must be one of {VARIANTS}, got {variant!r}")
        config.validate()
        if graph.m < 1:
            raise ModelError("training graph has no edges")
        if features.shape[0] != graph.n:
            raise ModelError(
                f"features have {features.shape[0]} rows for {graph.n} nodes"
            )
        self.config = config
        self.variant = variant
        self.graph = graph
        self.n = graph.n
        self.d_in = int(features.shape[1])
        self.features = features.tocsr() if issparse(features) else np.asarray(
            features, dtype=np.float64
        )
        self.seed = int(seed)
        rng = np.random.default_rng(seed)

        sampled = sample_edges(graph, config.epsilon, seed=seed)
        self.complex: SimplicialComplex = build_complex(sampled)
        b1 = self.complex.boundary_nodes()
        b2 = self.complex.boundary_edges() if self.complex.q else None
        edge_op = hodge_k(b1, b2)
        self._edge_operator = edge_op
        self.propagation = normalized_graph_csr(graph)
        self.bundle = self._build_bundle(edge_op)
        self.params = self._init_params(rng)

    # ----- operator preparation -------------------------------------------

    def _build_bundle(self, edge_op: OperatorMatrix) -> _OperatorBundle:
        cfg = self.config
        m = edge_op.dim
        if self.variant == "only_L1":
            static = _row_softmax_np(np.maximum(edge_op.values, 0.0))
            return _OperatorBundle(None, None, None, static, m)
        r = 1 if self.variant == "no_random_walk" else cfg.walk_length
        down_op = OperatorMatrix(values=edge_op.down, kind="L_k")
        up_op = OperatorMatrix(values=edge_op.up, kind="L_k")
        down_pow = power_operator(down_op, r).values if r > 1 else down_op.values
        up_pow = power_operator(up_op, r).values if r > 1 else up_op.values
        projector = projector_top(down_op, m)  # identity: equal block dims
        down_proj = projector.project_rows(down_pow)
        if self.variant == "no_relation":
            raw = np.block(
                [[down_pow, np.zeros((m, m))], [np.zeros((m, m)), up_pow]]
            )
            static = _row_softmax_np(np.maximum(raw, 0.0))
            return _OperatorBundle(down_pow, up_pow, down_proj, static, 2 * m)
        if cfg.relation == "inner_product":
            coupling = down_proj @ up_pow.T
            raw = np.block([[down_pow, coupling], [coupling.T, up_pow]])
            static = _row_softmax_np(np.maximum(raw, 0.0))
            return _OperatorBundle(down_pow, up_pow, down_proj, static, 2 * m)
        return _OperatorBundle(down_pow, up_pow, down_proj, None, 2 * m)

    def _init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg = self.config
        dims = self.bundle.operator_dim
        params: dict[str, np.ndarray] = {}
        if self.bundle.static_operator is None:
            d2 = self.bundle.up_pow.shape[0]
            params["relation_embed_down"] = _glorot(rng, cfg.embed_dim, d2)
            params["relation_embed_up"] = _glorot(rng, cfg.embed_dim, d2)
        params["feature_to_simplex"] = _glorot(rng, self.d_in, dims)
        params["simplex_to_hidden"] = _glorot(rng, dims, cfg.hidden_pair)
        params["conv1_weight"] = _glorot(rng, self.d_in, cfg.hidden_conv)
        params["conv2_weight"] = _glorot(rng, cfg.hidden_conv, cfg.conv_out)
        params["score_weight"] = _glorot(rng, cfg.conv_out + cfg.hidden_pair, 1)
        params["score_bias"] = np.zeros((1, 1))
        return params

    # ----- forward passes -------------------------------------------------

    def _wrap_params(self, tape: ad.Tape | None) -> dict[str, ad.Tensor]:
        if tape is None:
            return {k: ad.constant(v, name=k) for k, v in self.params.items()}
        return {k: tape.variable(v, name=k) for k, v in self.params.items()}

    def _mixing_operator(self, p: dict[str, ad.Tensor], tape) -> ad.Tensor:
        """Row-stochastic block operator, taped when the relation is learned."""
        if self.bundle.static_operator is not None:
            return ad.constant(self.bundle.static_operator, name="mixing")
        left = ad.matmul(
            ad.constant(self.bundle.down_proj), ad.transpose(p["relation_embed_down"])
        )  # (d1, embed_dim)
        right = ad.matmul(
            p["relation_embed_up"], ad.constant(self.bundle.up_pow)
        )  # (embed_dim, d2)
        coupling = ad.matmul(left, right)  # (d1, d2)
        top = ad.concat_cols(ad.constant(self.bundle.down_pow), coupling)
        bottom = ad.concat_cols(ad.transpose(coupling), ad.constant(self.bundle.up_pow))
        raw = ad.concat_rows(top, bottom)
        return ad.row_softmax(ad.relu(raw))

    def _pair_branch(self, p, mixing: ad.Tensor) -> ad.Tensor:
        z1 = ad.left_const_matmul(self.features, p["feature_to_simplex"])
        z2 = ad.matmul(z1, mixing)
        return ad.matmul(z2, p["simplex_to_hidden"])

    def _conv_branch(self, p, train: bool, rng) -> ad.Tensor:
        cfg = self.config
        x = self.features
        if train and cfg.dropout > 0.0:
            if issparse(x):
                x = x.copy()
                keep = rng.random(x.data.shape) >= cfg.dropout
                x.data = np.where(keep, x.data / (1.0 - cfg.dropout), 0.0)
            else:
                mask = (rng.random(x.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
                x = x * mask
        h1 = ad.left_const_matmul(
            self.propagation, ad.left_const_matmul(x, p["conv1_weight"])
        )
        act = ad.relu(h1)
        if train and cfg.dropout > 0.0:
            act = ad.dropout(act, cfg.dropout, rng)
        return ad.left_const_matmul(
            self.propagation, ad.matmul(act, p["conv2_weight"])
        )

    def embeddings(
        self, tape: ad.Tape | None = None, train: bool = False, rng=None
    ) -> tuple[ad.Tensor, ad.Tensor, dict[str, ad.Tensor]]:
        """Higher-order and convolutional node embeddings (Z, H)."""
        if train and rng is None:
            raise ModelError("training forward needs an rng for dropout")
        p = self._wrap_params(tape)
        mixing = self._mixing_operator(p, tape)
        z = self._pair_branch(p, mixing)
        h = self._conv_branch(p, train, rng)
        return z, h, p

    def pair_distances(
        self, z: ad.Tensor, h: ad.Tensor, pairs: np.ndarray, p
    ) -> ad.Tensor:
        """Nonnegative scalar distance per node pair, shape (k, 1)."""
        cfg = self.config
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        dz = ad.elementwise_square(
            ad.sub(ad.gather_rows(z, pairs[:, 0]), ad.gather_rows(z, pairs[:, 1]))
        )
        dh = ad.elementwise_square(
            ad.sub(ad.gather_rows(h, pairs[:, 0]), ad.gather_rows(h, pairs[:, 1]))
        )
        feats = ad.concat_cols(
            ad.scale(dh, cfg.weight_conv), ad.scale(dz, cfg.weight_pair)
        )
        pre = ad.add_row_bias(ad.matmul(feats, p["score_weight"]), p["score_bias"])
        return ad.relu(pre)

    def loss(
        self,
        pos_pairs: np.ndarray,
        neg_pairs: np.ndarray,
        train: bool = True,
        rng=None,
    ) -> tuple[ad.Tape | None, ad.Tensor, dict[str, ad.Tensor]]:
        """Mean BCE over positive and negative pairs.

        Returns (tape, loss, wrapped params); tape is None in eval mode.
        """
        tape = ad.Tape() if train else None
        z, h, p = self.embeddings(tape, train=train, rng=rng)
        pairs = np.vstack([pos_pairs, neg_pairs])
        labels = np.vstack(
            [np.ones((len(pos_pairs), 1)), np.zeros((len(neg_pairs), 1))]
        )
        dist = self.pair_distances(z, h, pairs, p)
        loss = ad.bce_with_logistic(
            dist, labels, self.config.threshold, self.config.temperature
        )
        return tape, loss, p

    def pair_probabilities(self, pairs: np.ndarray) -> np.ndarray:
        """Eval-mode edge probabilities, shape (k,)."""
        z, h, p = self.embeddings(tape=None, train=False)
        dist = self.pair_distances(z, h, pairs, p)
        prob = ad.fermi_dirac(dist, self.config.threshold, self.config.temperature)
        return prob.values.ravel()

    def score_all_pairs(self, batch_size: int = 200_000):
        """Probabilities for every unordered node pair, batched.

        Yields (pairs_block, scores_block); pairs enumerate u < v in
        lexicographic order.
        """
        z, h, p = self.embeddings(tape=None, train=False)
        n = self.n
        block: list[np.ndarray] = []
        count = 0
        for u in range(n - 1):
            vs = np.arange(u + 1, n)
            block.append(np.column_stack([np.full(vs.shape, u), vs]))
            count += vs.size
            if count >= batch_size or u == n - 2:
                pairs = np.vstack(block)
                dist = self.pair_distances(z, h, pairs, p)
                prob = ad.fermi_dirac(
                    dist, self.config.threshold, self.config.temperature
                )
                yield pairs, prob.values.ravel()
                block, count = [], 0

    def mixing_operator_values(self) -> np.ndarray:
        """Current mixing operator as a plain array (for diagnostics/tests)."""
        p = self._wrap_params(None)
        return self._mixing_operator(p, None).values


# ----- checkpoints ---------------------------------------------------------


def save_checkpoint(path, model: BscnetsModel, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, JSON header, then row-major float64 blocks.

    Header fields: config, variant, seed, parameter names and shapes, and
    any caller metadata (seeds of the surrounding run, dataset name).
    """
    header = {
        "config": model.config.to_dict(),
        "variant": model.variant,
        "seed": model.seed,
        "params": [
            {"name": k, "shape": list(v.shape)} for k, v in model.params.items()
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">Q", len(blob)))
        fh.write(blob)
        for value in model.params.values():
            fh.write(np.ascontiguousarray(value, dtype=np.float64).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (config, variant, params, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a model checkpoint (bad magic)")
        (length,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ModelError(f"{path}: truncated parameter {spec['name']}")
            params[spec["name"]] = np.frombuffer(raw, dtype=np.float64).reshape(
                shape
            ).copy()
    config = ModelConfig.from_dict(header["config"])
    return config, header["variant"], params, header.get("meta", {})
