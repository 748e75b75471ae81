"""Autodiff tape: forward values, reverse-mode gradients vs central differences."""

import numpy as np
import pytest
from scipy.sparse import random as sparse_random

from bscnets import autodiff as ad
from conftest import central_difference, relative_error


def _loss_through(op_builder, arrays, h=1e-5):
    """Autodiff and finite-difference gradients of sum(op(params)).

    op_builder(tape, tensors) must return the op output tensor; the loss
    is its total sum unless the output is already scalar.
    """
    def run(params, want_grads=False):
        tape = ad.Tape()
        tensors = [tape.variable(p) for p in params]
        out = op_builder(tape, tensors)
        loss = out if out.shape == (1, 1) else ad.total_sum(out)
        if not want_grads:
            return float(loss.values[0, 0])
        tape.backward(loss)
        return [t.grad.copy() for t in tensors]

    auto = run(arrays, want_grads=True)
    fd = central_difference(lambda ps: run(ps), arrays, h=h)
    return auto, fd


def _check_op(op_builder, arrays, tol=1e-4, h=1e-5):
    auto, fd = _loss_through(op_builder, arrays, h=h)
    for a, f in zip(auto, fd):
        assert relative_error(a, f) <= tol


class TestForwardValues:
    def test_relu_then_row_softmax(self):
        """softmax(relu([1, -1, 0])) = softmax([1, 0, 0]) ~ [.5761, .2119, .2119]."""
        tape = ad.Tape()
        x = tape.variable(np.array([[1.0, -1.0, 0.0]]))
        out = ad.row_softmax(ad.relu(x))
        assert np.allclose(out.values, [[0.57611688, 0.21194156, 0.21194156]],
                           atol=1e-7)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = ad.constant(rng.normal(size=(6, 9)) * 3.0)
        s = ad.row_softmax(x)
        assert np.allclose(s.values.sum(axis=1), 1.0, atol=1e-12)
        assert s.values.min() >= 0.0

    def test_fermi_dirac_is_half_at_delta(self):
        d = ad.constant(np.array([[2.0]]))
        p = ad.fermi_dirac(d, delta=2.0, eta=1.0)
        assert p.values[0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_fermi_dirac_decreasing_and_stable(self):
        d = ad.constant(np.array([[0.0, 1.0, 2.0, 10.0, 1000.0]]))
        p = ad.fermi_dirac(d, delta=2.0, eta=1.0).values.ravel()
        assert np.all(np.diff(p) < 0)
        assert np.isfinite(p).all()

    def test_bce_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        dist = np.abs(rng.normal(size=(8, 1))) * 3.0
        y = (rng.random((8, 1)) < 0.5).astype(float)
        tape = ad.Tape()
        d = tape.variable(dist)
        loss = ad.bce_with_logistic(d, y, delta=2.0, eta=1.0)
        p = 1.0 / (np.exp(dist - 2.0) + 1.0)
        direct = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean()
        assert loss.values[0, 0] == pytest.approx(direct, rel=1e-12)

    def test_relu_subgradient_at_zero_is_zero(self):
        tape = ad.Tape()
        x = tape.variable(np.array([[0.0, 2.0, -3.0]]))
        loss = ad.total_sum(ad.relu(x))
        tape.backward(loss)
        assert x.grad.tolist() == [[0.0, 1.0, 0.0]]

    def test_sum_backward_is_ones(self):
        tape = ad.Tape()
        x = tape.variable(np.arange(6.0).reshape(2, 3))
        tape.backward(ad.total_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))


class TestGradientChecks:
    """Every op passes a central finite-difference check at 1e-4 (1e-3 through
    softmax)."""

    def test_matmul(self):
        rng = np.random.default_rng(2)
        _check_op(lambda t, xs: ad.matmul(xs[0], xs[1]),
                  [rng.normal(size=(4, 3)), rng.normal(size=(3, 5))])

    def test_square_of_product(self):
        rng = np.random.default_rng(3)
        _check_op(
            lambda t, xs: ad.elementwise_square(ad.matmul(xs[0], xs[1])),
            [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
        )

    def test_add_sub(self):
        rng = np.random.default_rng(4)
        _check_op(lambda t, xs: ad.add(xs[0], xs[1]),
                  [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))])
        _check_op(lambda t, xs: ad.sub(xs[0], xs[1]),
                  [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))])

    def test_add_row_bias(self):
        rng = np.random.default_rng(5)
        _check_op(lambda t, xs: ad.add_row_bias(xs[0], xs[1]),
                  [rng.normal(size=(5, 3)), rng.normal(size=(1, 3))])

    def test_scale(self):
        rng = np.random.default_rng(6)
        _check_op(lambda t, xs: ad.scale(xs[0], -1.7),
                  [rng.normal(size=(4, 4))])

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 4))
        x[np.abs(x) < 1e-2] = 0.5  # keep finite differences off the kink
        _check_op(lambda t, xs: ad.relu(xs[0]), [x])

    def test_row_softmax(self):
        rng = np.random.default_rng(8)
        weights = rng.normal(size=(5, 1))
        def build(tape, xs):
            s = ad.row_softmax(xs[0])
            return ad.matmul(s, ad.constant(weights))
        _check_op(build, [rng.normal(size=(4, 5))], tol=1e-3)

    def test_concat_and_transpose(self):
        rng = np.random.default_rng(9)
        _check_op(
            lambda t, xs: ad.concat_cols(xs[0], xs[1]),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))],
        )
        _check_op(
            lambda t, xs: ad.concat_rows(xs[0], xs[1]),
            [rng.normal(size=(2, 3)), rng.normal(size=(4, 3))],
        )
        _check_op(
            lambda t, xs: ad.matmul(ad.transpose(xs[0]), xs[0]),
            [rng.normal(size=(3, 4))],
        )

    def test_gather_rows_with_duplicates(self):
        rng = np.random.default_rng(10)
        idx = np.array([0, 2, 2, 1, 0])
        weights = rng.normal(size=(3, 1))
        _check_op(
            lambda t, xs: ad.matmul(ad.gather_rows(xs[0], idx),
                                    ad.constant(weights)),
            [rng.normal(size=(4, 3))],
        )

    def test_dropout_with_fixed_mask(self):
        rng = np.random.default_rng(11)
        _check_op(
            lambda t, xs: ad.dropout(xs[0], 0.4, np.random.default_rng(123)),
            [rng.normal(size=(5, 5))],
        )

    def test_left_const_matmul_dense_and_sparse(self):
        rng = np.random.default_rng(12)
        dense = rng.normal(size=(6, 4))
        sparse = sparse_random(6, 4, density=0.5, random_state=3, format="csr")
        for mat in (dense, sparse):
            _check_op(lambda t, xs, m=mat: ad.left_const_matmul(m, xs[0]),
                      [rng.normal(size=(4, 3))])

    def test_fermi_dirac_grad(self):
        rng = np.random.default_rng(13)
        _check_op(
            lambda t, xs: ad.fermi_dirac(xs[0], delta=2.0, eta=0.7),
            [np.abs(rng.normal(size=(6, 1))) * 2.0],
        )

    def test_bce_grad(self):
        rng = np.random.default_rng(14)
        y = (rng.random((7, 1)) < 0.5).astype(float)
        _check_op(
            lambda t, xs: ad.bce_with_logistic(xs[0], y, delta=2.0, eta=1.0),
            [np.abs(rng.normal(size=(7, 1))) * 2.0],
        )

    def test_shared_operand_accumulates(self):
        """x used twice: d/dx sum(x @ x) needs both product-rule terms."""
        rng = np.random.default_rng(15)
        _check_op(lambda t, xs: ad.matmul(xs[0], xs[0]),
                  [rng.normal(size=(3, 3))])


class TestDropoutSemantics:
    def test_p_zero_is_identity(self):
        tape = ad.Tape()
        x = tape.variable(np.ones((3, 3)))
        assert ad.dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_inverted_scaling_preserves_mean(self):
        """Average of many masked copies returns the input within 2%."""
        x = np.full((4, 4), 3.0)
        rng = np.random.default_rng(42)
        acc = np.zeros_like(x)
        reps = 10_000
        for _ in range(reps):
            acc += ad.dropout(ad.constant(x), 0.5, rng).values
        assert np.abs(acc / reps - x).max() <= 0.02 * 3.0 * 4  # 2% of scale

    def test_bad_probability_rejected(self):
        x = ad.constant(np.ones((2, 2)))
        for p in (-0.1, 1.0):
            with pytest.raises(ad.AutodiffError):
                ad.dropout(x, p, np.random.default_rng(0))


class TestTapeSemantics:
    def test_deterministic_gradients(self):
        def run():
            rng = np.random.default_rng(77)
            tape = ad.Tape()
            a = tape.variable(rng.normal(size=(4, 4)))
            b = tape.variable(rng.normal(size=(4, 4)))
            h = ad.relu(ad.matmul(a, b))
            loss = ad.total_sum(ad.elementwise_square(h))
            tape.backward(loss)
            return a.grad.copy(), b.grad.copy()
        ga1, gb1 = run()
        ga2, gb2 = run()
        assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)

    def test_repeated_backward_is_idempotent(self):
        tape = ad.Tape()
        x = tape.variable(np.array([[1.0, 2.0]]))
        loss = ad.total_sum(ad.elementwise_square(x))
        tape.backward(loss)
        first = x.grad.copy()
        tape.backward(loss)
        assert np.array_equal(x.grad, first)

    def test_backward_needs_scalar(self):
        tape = ad.Tape()
        x = tape.variable(np.ones((2, 2)))
        y = ad.relu(x)
        with pytest.raises(ad.AutodiffError, match="scalar"):
            tape.backward(y)

    def test_backward_needs_own_tape(self):
        tape1, tape2 = ad.Tape(), ad.Tape()
        x = tape1.variable(np.ones((1, 1)))
        loss = ad.total_sum(x)
        with pytest.raises(ad.AutodiffError):
            tape2.backward(loss)

    def test_mixed_tapes_rejected(self):
        tape1, tape2 = ad.Tape(), ad.Tape()
        a = tape1.variable(np.ones((2, 2)))
        b = tape2.variable(np.ones((2, 2)))
        with pytest.raises(ad.AutodiffError, match="different tapes"):
            ad.add(a, b)

    def test_variable_requires_tape(self):
        with pytest.raises(ad.AutodiffError):
            ad.Tensor(np.ones((2, 2)), requires_grad=True, tape=None)

    def test_shape_errors_name_both_shapes(self):
        a = ad.constant(np.ones((2, 3)))
        b = ad.constant(np.ones((2, 3)))
        with pytest.raises(ad.AutodiffError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(a, b)

    def test_constants_reusable_across_tapes(self):
        c = ad.constant(np.eye(2))
        for _ in range(2):
            tape = ad.Tape()
            x = tape.variable(np.ones((2, 2)))
            loss = ad.total_sum(ad.matmul(c, x))
            tape.backward(loss)
            assert np.array_equal(x.grad, np.ones((2, 2)))
            assert c.grad is None
