"""Hodge-Laplacian operators on simplicial complexes.

The k-th Hodge Laplacian of a complex with boundary maps B_k, B_{k+1} is

    L_k = B_k^T B_k  +  B_{k+1} B_{k+1}^T

whose two terms are the "down" part (adjacency through shared faces) and
the "up" part (adjacency through shared cofaces).  L_0 reduces to the
graph Laplacian D - A.  Every such operator is symmetric positive
semidefinite, and because the down and up parts annihilate each other
(B_k B_{k+1} = 0) the matrix power of the sum splits:

    (L_k)^r = (L_k^down)^r + (L_k^up)^r.

This module also provides block-diagonal stacking of several Laplacians,
spectral projection onto a dominant eigenspace (used to reconcile blocks
of different dimension), the renormalized propagation operator
D^{-1/2} (A + I) D^{-1/2} for the convolutional branch, and a Schur
complement test that decides positive semidefiniteness of a 2 x 2 block
operator without assembling it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .complex_core import Graph, SignedIncidence

__all__ = [
    "OperatorError",
    "OperatorMatrix",
    "Projector",
    "SchurReport",
    "hodge_k",
    "block_hodge",
    "power_operator",
    "projector_top",
    "normalized_graph_operator",
    "normalized_graph_csr",
    "check_psd_schur",
    "save_operator_text",
    "load_operator_text",
]

KIND_HODGE = "L_k"
KIND_BLOCK = "block"
KIND_REDUCED_BLOCK = "reduced_block"
KIND_AHLB_RAW = "ahlb_raw"
KIND_AHLB = "ahlb"
KIND_NORMALIZED_GRAPH = "normalized_graph"


class OperatorError(ValueError):
    """Raised for dimension mismatches, bad powers, or solver failures."""


@dataclass(frozen=True)
class OperatorMatrix:
    """Square dense float64 operator with an origin tag.

    ``down`` and ``up`` carry the two Laplacian parts when the operator
    has them (values = down + up); block assemblies propagate the parts
    blockwise so the power identity stays checkable.
    """

    values: np.ndarray
    kind: str
    down: np.ndarray | None = None
    up: np.ndarray | None = None

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise OperatorError(f"operator must be square, got shape {v.shape}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def has_parts(self) -> bool:
        return self.down is not None and self.up is not None


def _gram_down(b: SignedIncidence) -> np.ndarray:
    """B^T B as dense float64 via sparse products."""
    s = b.to_sparse()
    return np.asarray((s.T @ s).todense(), dtype=np.float64)


def _gram_up(b: SignedIncidence) -> np.ndarray:
    s = b.to_sparse()
    return np.asarray((s @ s.T).todense(), dtype=np.float64)


def hodge_k(
    b_k: SignedIncidence | None, b_k_plus_1: SignedIncidence | None
) -> OperatorMatrix:
    """L_k = B_k^T B_k + B_{k+1} B_{k+1}^T for the given boundary maps.

    Pass ``b_k = None`` for k = 0 (no lower boundary, L_0 = B_1 B_1^T)
    and ``b_k_plus_1 = None`` when the complex has no (k+1)-simplices.
    The operator dimension is the number of k-simplices; a missing part
    contributes zeros of that dimension.
    """
    if b_k is None and b_k_plus_1 is None:
        raise OperatorError("hodge_k needs at least one boundary map")
    if b_k is not None and b_k_plus_1 is not None and b_k.cols != b_k_plus_1.rows:
        raise OperatorError(
            f"boundary dims disagree: B_k has {b_k.cols} columns, "
            f"B_k+1 has {b_k_plus_1.rows} rows"
        )
    dim = b_k.cols if b_k is not None else b_k_plus_1.rows
    down = _gram_down(b_k) if b_k is not None else np.zeros((dim, dim))
    up = _gram_up(b_k_plus_1) if b_k_plus_1 is not None else np.zeros((dim, dim))
    return OperatorMatrix(values=down + up, kind=KIND_HODGE, down=down, up=up)


def block_hodge(
    operators: list[OperatorMatrix], kind: str = KIND_BLOCK
) -> OperatorMatrix:
    """Block-diagonal stack of square operators, preserving down/up parts."""
    if not operators:
        raise OperatorError("block_hodge needs at least one operator")
    dims = [op.dim for op in operators]
    total = sum(dims)
    values = np.zeros((total, total))
    parts_known = all(op.has_parts() for op in operators)
    down = np.zeros((total, total)) if parts_known else None
    up = np.zeros((total, total)) if parts_known else None
    offset = 0
    for op in operators:
        end = offset + op.dim
        values[offset:end, offset:end] = op.values
        if parts_known:
            down[offset:end, offset:end] = op.down
            up[offset:end, offset:end] = op.up
        offset = end
    return OperatorMatrix(values=values, kind=kind, down=down, up=up)


def power_operator(op: OperatorMatrix, r: int, tol: float = 1e-8) -> OperatorMatrix:
    """r-th matrix power by repeated multiplication.

    When the operator carries down/up parts, the decomposed form
    down^r + up^r is computed as well and verified against the direct
    power (they agree whenever down @ up = 0, which holds for Hodge
    Laplacians); the returned operator carries the powered parts.
    """
    if r < 1:
        raise OperatorError(f"power must be a positive integer, got {r}")
    powered = np.linalg.matrix_power(op.values, r)
    down_r = up_r = None
    if op.has_parts():
        down_r = np.linalg.matrix_power(op.down, r)
        up_r = np.linalg.matrix_power(op.up, r)
        scale = max(1.0, float(np.abs(powered).max()))
        gap = float(np.abs(down_r + up_r - powered).max())
        if gap > tol * scale:
            raise OperatorError(
                f"power decomposition failed: max deviation {gap:.3e} "
                f"exceeds {tol:.1e} x scale {scale:.3e}"
            )
    return OperatorMatrix(values=powered, kind=op.kind, down=down_r, up=up_r)


@dataclass(frozen=True)
class Projector:
    """Orthonormal basis of a dominant eigenspace, columns = eigenvectors.

    ``eigenvalues`` is descending and aligned with the columns; it is
    None for the identity shortcut (target dimension equals the source
    dimension, where no eigendecomposition is needed).
    """

    basis: np.ndarray
    eigenvalues: np.ndarray | None

    @property
    def source_dim(self) -> int:
        return int(self.basis.shape[0])

    @property
    def target_dim(self) -> int:
        return int(self.basis.shape[1])

    def project_rows(self, matrix: np.ndarray) -> np.ndarray:
        """Map each row of ``matrix`` into the eigenspace coordinates."""
        if matrix.shape[1] != self.source_dim:
            raise OperatorError(
                f"cannot project rows of shape {matrix.shape} with a "
                f"{self.source_dim}-dimensional basis"
            )
        if self.eigenvalues is None:
            return matrix
        return matrix @ self.basis


def projector_top(op: OperatorMatrix, d2: int) -> Projector:
    """Projector onto the top-d2 eigenspace of a symmetric operator.

    Eigenpairs are ordered by descending eigenvalue with a stable sort,
    so equal eigenvalues keep the solver's original relative order.
    Shortcuts to the identity when d2 equals the operator dimension.
    """
    d1 = op.dim
    if not 1 <= d2 <= d1:
        raise OperatorError(f"target dimension {d2} not in [1, {d1}]")
    if d2 == d1:
        return Projector(basis=np.eye(d1), eigenvalues=None)
    sym_gap = float(np.abs(op.values - op.values.T).max()) if d1 else 0.0
    if sym_gap > 1e-10 * max(1.0, float(np.abs(op.values).max())):
        raise OperatorError(
            f"projector_top needs a symmetric operator, asymmetry {sym_gap:.3e}"
        )
    try:
        eigvals, eigvecs = np.linalg.eigh(op.values)
    except np.linalg.LinAlgError as exc:
        raise OperatorError(
            f"eigensolver failed to converge on a {d1} x {d1} operator: {exc}"
        ) from None
    order = np.argsort(-eigvals, kind="stable")
    take = order[:d2]
    return Projector(basis=eigvecs[:, take], eigenvalues=eigvals[take])


def normalized_graph_operator(graph: Graph) -> OperatorMatrix:
    """Renormalized propagation operator D^{-1/2} (A + I) D^{-1/2}.

    D is the degree matrix of A + I (every node gains a self loop, so D
    is strictly positive and the inverse square root is well defined).
    """
    a_hat = graph.adjacency + np.eye(graph.n)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    values = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return OperatorMatrix(values=values, kind=KIND_NORMALIZED_GRAPH)


def normalized_graph_csr(graph: Graph):
    """Sparse CSR form of :func:`normalized_graph_operator` for large graphs."""
    from scipy.sparse import coo_matrix

    n = graph.n
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.ones(rows.shape[0], dtype=np.float64)
    a_hat = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).ravel())
    from scipy.sparse import diags

    return (diags(d_inv_sqrt) @ a_hat @ diags(d_inv_sqrt)).tocsr()


@dataclass(frozen=True)
class SchurReport:
    """Outcome of the block PSD test.

    ``schur_verdict`` comes from the two Schur conditions (off-diagonal
    range containment plus PSD Schur complement), ``direct_verdict`` from
    eigenvalues of the assembled block matrix; the two must agree for
    well-conditioned inputs.
    """

    range_ok: bool
    schur_min_eig: float
    schur_verdict: bool
    direct_min_eig: float
    direct_verdict: bool
    range_residual: float

    @property
    def agree(self) -> bool:
        return self.schur_verdict == self.direct_verdict


def check_psd_schur(
    top_left: np.ndarray,
    off_diag: np.ndarray,
    bottom_right: np.ndarray,
    tol: float = 1e-8,
) -> SchurReport:
    """Decide PSD of [[A, F], [F^T, B]] two ways and report both verdicts.

    Route one (no assembly): PSD holds iff B is PSD, the columns of F^T
    lie in the range of B (F^T = B B^+ F^T with the pseudoinverse B^+),
    and the generalized Schur complement A - F B^+ F^T is PSD.  Route
    two: smallest eigenvalue of the assembled matrix.  Tolerances are
    relative to each matrix's scale.
    """
    a = np.asarray(top_left, dtype=np.float64)
    b = np.asarray(bottom_right, dtype=np.float64)
    f = np.asarray(off_diag, dtype=np.float64)
    d1, d2 = a.shape[0], b.shape[0]
    if a.shape != (d1, d1) or b.shape != (d2, d2) or f.shape != (d1, d2):
        raise OperatorError(
            f"block shapes disagree: A {a.shape}, F {f.shape}, B {b.shape}"
        )
    b_pinv = np.linalg.pinv(b, hermitian=True)
    g = f.T  # (d2, d1), columns must lie in range(B)
    range_gap = float(np.abs(b @ b_pinv @ g - g).max())
    range_scale = max(1.0, float(np.abs(g).max()))
    range_ok = range_gap <= tol * range_scale

    schur = a - f @ b_pinv @ f.T
    schur = 0.5 * (schur + schur.T)  # symmetrize against roundoff
    schur_min = float(np.linalg.eigvalsh(schur).min()) if d1 else 0.0
    schur_scale = max(1.0, float(np.abs(schur).max()))
    b_min = float(np.linalg.eigvalsh(0.5 * (b + b.T)).min()) if d2 else 0.0
    b_scale = max(1.0, float(np.abs(b).max()))
    schur_verdict = (
        range_ok
        and b_min >= -tol * b_scale
        and schur_min >= -tol * schur_scale
    )

    assembled = np.block([[a, f], [f.T, b]])
    assembled = 0.5 * (assembled + assembled.T)
    direct_min = float(np.linalg.eigvalsh(assembled).min())
    direct_scale = max(1.0, float(np.abs(assembled).max()))
    direct_verdict = direct_min >= -tol * direct_scale

    return SchurReport(
        range_ok=range_ok,
        schur_min_eig=schur_min,
        schur_verdict=schur_verdict,
        direct_min_eig=direct_min,
        direct_verdict=direct_verdict,
        range_residual=range_gap,
    )


def save_operator_text(op: OperatorMatrix, path) -> None:
    """Plain-text dump: one header line 'kind rows cols', then row-major values."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{op.kind} {op.dim} {op.dim}\n")
        for row in op.values:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_operator_text(path) -> OperatorMatrix:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise OperatorError(f"{path}: malformed operator header {header!r}")
        kind, rows, cols = header[0], int(header[1]), int(header[2])
        values = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if values.shape != (rows, cols):
        raise OperatorError(
            f"{path}: header says {rows} x {cols}, data is {values.shape}"
        )
    return OperatorMatrix(values=values, kind=kind)
