"""Tensor engine: kernel forwards, finite-difference gradients, tape rules."""

import numpy as np
import pytest

from scenecodec import autodiff as ad
from scenecodec.autodiff import Tensor, backward, gradcheck

from conftest import make_rng


def leaf(rng, *shape):
    return ad.parameter(rng.normal(size=shape))


class TestForwards:
    def test_matmul_identity(self, rng):
        a = Tensor(rng.normal(size=(3, 5)))
        out = ad.matmul(Tensor(np.eye(3)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_softmax_uniform(self):
        out = ad.softmax(Tensor(np.zeros(7)), axis=-1)
        np.testing.assert_allclose(out.data, 1.0 / 7.0)

    def test_softmax_rows_sum_to_one(self, rng):
        out = ad.softmax(Tensor(rng.normal(size=(4, 9)) * 30), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_masked_fill_exact_zero(self, rng):
        x = Tensor(rng.normal(size=(3, 6)))
        mask = np.zeros((3, 6), dtype=bool)
        mask[:, 4:] = True
        probs = ad.softmax(ad.masked_fill(x, mask, -np.inf), axis=-1)
        assert (probs.data[:, 4:] == 0.0).all()
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_statistics(self, rng):
        out = ad.layer_norm(Tensor(rng.normal(size=(5, 64)) * 3 + 2), axis=-1)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)

    def test_embedding_lookup_and_range(self, rng):
        table = Tensor(rng.normal(size=(6, 4)))
        out = ad.embedding_lookup(table, np.array([1, 1, 5]))
        np.testing.assert_array_equal(out.data, table.data[[1, 1, 5]])
        with pytest.raises(IndexError):
            ad.embedding_lookup(table, np.array([6]))

    def test_concat_and_reshape(self, rng):
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 5)))
        out = ad.concat([a, b], axis=-1)
        assert out.shape == (2, 8)
        assert ad.reshape(out, (4, 4)).shape == (4, 4)

    def test_tmin_first_argmin(self):
        x = Tensor(np.array([[3.0, 1.0, 1.0], [0.0, 2.0, 0.0]]))
        out = ad.tmin(x, axis=1)
        np.testing.assert_array_equal(out.data, [1.0, 0.0])

    def test_dropout_eval_rate_zero_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        assert ad.dropout(x, 0.0, rng) is x

    def test_dropout_deterministic_under_seed(self, rng):
        x = Tensor(rng.normal(size=(50, 8)))
        out1 = ad.dropout(x, 0.3, make_rng(5))
        out2 = ad.dropout(x, 0.3, make_rng(5))
        np.testing.assert_array_equal(out1.data, out2.data)
        zero_frac = np.mean(out1.data == 0.0)
        assert 0.15 < zero_frac < 0.45

    def test_determinism_bit_identical(self, rng):
        x = rng.normal(size=(6, 6))
        w = rng.normal(size=(6, 6))

        def run():
            return ad.tsum(ad.softmax(ad.matmul(Tensor(x), Tensor(w)), axis=-1)).data

        assert run().tobytes() == run().tobytes()


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self, rng):
        w = leaf(rng, 3, 4)
        backward(ad.tsum(w))
        np.testing.assert_array_equal(w.grad, np.ones((3, 4)))

    def test_quadratic_gradient_is_w(self, rng):
        w = leaf(rng, 5)
        backward(ad.mul(ad.tsum(ad.square(w)), 0.5))
        np.testing.assert_allclose(w.grad, w.data, atol=1e-12)

    def test_backward_requires_scalar(self, rng):
        w = leaf(rng, 2, 2)
        with pytest.raises(ValueError, match="scalar"):
            backward(ad.mul(w, 2.0))

    def test_tape_single_use(self, rng):
        w = leaf(rng, 3)
        loss = ad.tsum(ad.square(w))
        backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            backward(loss)

    def test_consumed_interior_node_detected(self, rng):
        w = leaf(rng, 3)
        inner = ad.square(w)
        backward(ad.tsum(inner))
        with pytest.raises(RuntimeError, match="consumed"):
            backward(ad.tsum(ad.mul(inner, 2.0)))

    def test_grad_accumulates_over_fanout(self, rng):
        w = leaf(rng, 4)
        backward(ad.tsum(ad.add(w, w)))
        np.testing.assert_array_equal(w.grad, np.full(4, 2.0))


def _gradcheck_cases():
    """(name, builder) pairs; builder(rng) -> (fn, params)."""

    def unary(op, shape=(3, 4), transform=None):
        def build(rng):
            w = leaf(rng, *shape)
            if transform is not None:
                w.data = transform(w.data)
            return (lambda: ad.tsum(op(w))), [w]

        return build

    def case_matmul(rng):
        a, b = leaf(rng, 4, 3), leaf(rng, 3, 5)
        return (lambda: ad.tsum(ad.square(ad.matmul(a, b)))), [a, b]

    def case_matmul_batched(rng):
        a, b = leaf(rng, 2, 4, 3), leaf(rng, 3, 5)
        return (lambda: ad.tsum(ad.square(ad.matmul(a, b)))), [a, b]

    def case_add_broadcast(rng):
        a, b = leaf(rng, 4, 5), leaf(rng, 5)
        return (lambda: ad.tsum(ad.square(ad.add(a, b)))), [a, b]

    def case_sub_broadcast(rng):
        a, b = leaf(rng, 2, 1, 5), leaf(rng, 3, 1)
        return (lambda: ad.tsum(ad.square(ad.sub(a, b)))), [a, b]

    def case_mul_broadcast(rng):
        a, b = leaf(rng, 4, 5), leaf(rng, 4, 1)
        return (lambda: ad.tsum(ad.square(ad.mul(a, b)))), [a, b]

    def case_softmax(rng):
        w = leaf(rng, 3, 7)
        v = Tensor(rng.normal(size=(3, 7)))
        return (lambda: ad.tsum(ad.mul(ad.softmax(w, axis=-1), v))), [w]

    def case_masked_softmax(rng):
        w = leaf(rng, 2, 6)
        mask = np.zeros((2, 6), dtype=bool)
        mask[:, 4:] = True
        v = Tensor(rng.normal(size=(2, 6)))
        return (
            lambda: ad.tsum(ad.mul(ad.softmax(ad.masked_fill(w, mask, -np.inf), axis=-1), v))
        ), [w]

    def case_layer_norm(rng):
        w = leaf(rng, 4, 9)
        v = Tensor(rng.normal(size=(4, 9)))
        return (lambda: ad.tsum(ad.mul(ad.layer_norm(w, axis=-1), v))), [w]

    def case_embedding(rng):
        table = leaf(rng, 5, 3)
        ids = np.array([0, 2, 2, 4])
        return (lambda: ad.tsum(ad.square(ad.embedding_lookup(table, ids)))), [table]

    def case_concat(rng):
        a, b = leaf(rng, 3, 2), leaf(rng, 3, 4)
        return (lambda: ad.tsum(ad.square(ad.concat([a, b], axis=-1)))), [a, b]

    def case_reductions(rng):
        w = leaf(rng, 3, 5)
        return (
            lambda: ad.add(ad.tsum(ad.square(ad.tmean(w, axis=1))), ad.tmean(ad.square(w)))
        ), [w]

    def case_tmin(rng):
        w = leaf(rng, 6, 4)
        return (lambda: ad.tsum(ad.tmin(ad.square(w), axis=1))), [w]

    def case_transpose_broadcast(rng):
        w = leaf(rng, 2, 3, 4)
        return (
            lambda: ad.tsum(
                ad.square(ad.broadcast_to(ad.transpose(w, (1, 0, 2)), (5, 3, 2, 4)))
            )
        ), [w]

    def case_clip(rng):
        w = leaf(rng, 40)
        return (lambda: ad.tsum(ad.square(ad.clip(w, -0.7, 0.7)))), [w]

    def case_dropout(rng):
        w = leaf(rng, 6, 6)
        return (lambda: ad.tsum(ad.square(ad.dropout(w, 0.4, make_rng(3))))), [w]

    return [
        ("relu", unary(ad.relu)),
        ("sigmoid", unary(ad.sigmoid)),
        ("tanh", unary(ad.tanh)),
        ("exp", unary(ad.exp)),
        ("log", unary(ad.log, transform=lambda d: np.abs(d) + 0.5)),
        ("square", unary(ad.square)),
        ("maximum", unary(lambda t: ad.maximum(t, 0.1))),
        ("matmul", case_matmul),
        ("matmul_batched", case_matmul_batched),
        ("add_broadcast", case_add_broadcast),
        ("sub_broadcast", case_sub_broadcast),
        ("mul_broadcast", case_mul_broadcast),
        ("softmax", case_softmax),
        ("masked_softmax", case_masked_softmax),
        ("layer_norm", case_layer_norm),
        ("embedding", case_embedding),
        ("concat", case_concat),
        ("reductions", case_reductions),
        ("tmin", case_tmin),
        ("transpose_broadcast", case_transpose_broadcast),
        ("clip", case_clip),
        ("dropout", case_dropout),
    ]


@pytest.mark.parametrize("name,build", _gradcheck_cases(), ids=[n for n, _ in _gradcheck_cases()])
def test_kernel_gradients_match_finite_differences(name, build):
    # five random instances per kernel, 64-bit, rel. err < 1e-4
    for trial in range(5):
        fn, params = build(make_rng(1000 * trial + hash(name) % 997))
        err = gradcheck(fn, params, max_entries_per_tensor=6, seed=trial)
        assert err < 1e-4, f"{name} trial {trial}: rel err {err:.2e}"


class TestGradcheckHarness:
    def test_detects_wrong_gradient(self, rng):
        w = leaf(rng, 4)

        def bad_op(x):
            out = x.data * 3.0
            return Tensor(out, parents=(x,), backward_fn=lambda g: (g * 2.0,))  # wrong

        err = gradcheck(lambda: ad.tsum(bad_op(w)), [w])
        assert err > 0.3
