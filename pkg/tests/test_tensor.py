"""Autodiff engine tests: op forwards, backward rules, Adam, gradcheck."""

import numpy as np
import pytest

from dmbagcn import tensor as T
from dmbagcn.errors import EmptySelectionError, ShapeError, SingularityError
from dmbagcn.tensor import Adam, GradCheckReport, Tape, Tensor, adam_step, gradcheck


def scalar_loss(fn, params):
    """Build fresh-tape loss closure for gradcheck."""
    def loss_fn():
        tape = Tape()
        tape.watch(*[p for _, p in params])
        return fn()
    return loss_fn


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, b.data)

    def test_hand_dot(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradcheck_3x3(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(3, 3)))
        b = Tensor(rng.normal(size=(3, 3)))
        params = [("a", a), ("b", b)]
        rep = gradcheck(scalar_loss(lambda: T.tsum(T.matmul(a, b)), params), params, rtol=1e-6)
        assert rep.passed, rep.failures

    def test_batched_matmul_grad(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=(2, 3, 4)))
        w = Tensor(rng.normal(size=(4, 5)))
        params = [("a", a), ("w", w)]
        rep = gradcheck(scalar_loss(lambda: T.tsum(T.silu(T.matmul(a, w))), params), params)
        assert rep.passed, rep.failures


class TestElementwise:
    def test_expm1_zero(self):
        assert T.expm1(Tensor(0.0)).item() == 0.0

    def test_softplus_zero_is_ln2(self):
        assert T.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_silu_zero(self):
        assert T.silu(Tensor(0.0)).item() == 0.0

    def test_reciprocal_of_zero_raises(self):
        with pytest.raises(SingularityError):
            T.reciprocal(Tensor([1.0, 0.0]))

    def test_unary_gradients(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(4, 3)))
        params = [("x", x)]
        for op in (T.exp, T.expm1, T.softplus, T.silu, T.neg, T.reciprocal):
            rep = gradcheck(scalar_loss(lambda op=op: T.tsum(op(x)), params), params)
            assert rep.passed, (op.__name__, rep.failures)

    def test_row_broadcast_add_mul(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(5, 3)))
        row = Tensor(rng.normal(size=(3,)))
        params = [("a", a), ("row", row)]
        rep = gradcheck(
            scalar_loss(lambda: T.tsum(T.mul(T.add(a, row), row)), params), params
        )
        assert rep.passed, rep.failures

    def test_broadcast_backward_conservation(self):
        # Gradient of a broadcast row equals the column-sum of the gradient of
        # an explicitly tiled copy.
        rng = np.random.default_rng(5)
        a = rng.normal(size=(6, 3))
        w = rng.normal(size=(6, 3))
        row = rng.normal(size=(3,))

        tape = Tape()
        r1 = Tensor(row)
        tape.watch(r1)
        loss1 = T.tsum(T.mul(T.add(Tensor(a), r1), Tensor(w)))
        tape.backward(loss1)

        tape2 = Tape()
        tiled = Tensor(np.tile(row, (6, 1)))
        tape2.watch(tiled)
        loss2 = T.tsum(T.mul(T.add(Tensor(a), tiled), Tensor(w)))
        tape2.backward(loss2)

        np.testing.assert_allclose(r1.grad, tiled.grad.sum(axis=0), rtol=0, atol=1e-15)

    def test_where_mask_routes_gradients(self):
        rng = np.random.default_rng(6)
        mask = rng.random((4, 4)) > 0.5
        a = Tensor(rng.normal(size=(4, 4)))
        b = Tensor(rng.normal(size=(4, 4)))
        params = [("a", a), ("b", b)]
        rep = gradcheck(
            scalar_loss(lambda: T.tsum(T.exp(T.where_mask(mask, a, b))), params), params
        )
        assert rep.passed, rep.failures


class TestShapeOps:
    def test_reshape_flip_narrow_take_stack(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(3, 4)))
        y = Tensor(rng.normal(size=(3, 4)))
        params = [("x", x), ("y", y)]

        def loss():
            s = T.stack([x, y], axis=1)                       # [3,2,4]
            s = T.flip(s, axis=2)
            s = T.narrow(s, axis=2, start=1, length=2)        # [3,2,2]
            s = T.take_index(s, axis=1, index=0)              # [3,2]
            return T.tsum(T.mul(T.reshape(s, (6,)), T.reshape(s, (6,))))

        rep = gradcheck(scalar_loss(loss, params), params)
        assert rep.passed, rep.failures


class TestBackwardContract:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6, dtype=float).reshape(2, 3))
        tape = Tape()
        tape.watch(x)
        tape.backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gradient(self):
        x = Tensor([1.0, 2.0])
        tape = Tape()
        tape.watch(x)
        tape.backward(T.tsum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=0, atol=0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0])
        tape = Tape()
        tape.watch(x)
        with pytest.raises(ValueError):
            tape.backward(T.mul(x, x))

    def test_fanout_accumulates(self):
        x = Tensor([3.0])
        tape = Tape()
        tape.watch(x)
        y = T.add(T.mul(x, x), T.mul(x, x))  # 2x^2 -> grad 4x
        tape.backward(T.tsum(y))
        np.testing.assert_allclose(x.grad, [12.0])

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(11)
        w = Tensor(rng.normal(size=(4, 4)))
        xv = rng.normal(size=(5, 4))

        def run():
            tape = Tape()
            tape.watch(w)
            out = T.cross_entropy(T.matmul(Tensor(xv), w), np.array([0, 1, 2, 3, 0]),
                                  np.ones(5, dtype=bool))
            tape.backward(out)
            return w.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1, g2)

    def test_mixing_tapes_rejected(self):
        a, b = Tensor([1.0]), Tensor([2.0])
        Tape().watch(a)
        Tape().watch(b)
        with pytest.raises(ValueError):
            T.add(a, b)

    def test_debug_mode_flags_nonfinite(self):
        T.set_debug_checks(True)
        try:
            with pytest.raises(FloatingPointError):
                T.exp(Tensor([1000.0]))
        finally:
            T.set_debug_checks(False)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((4, 3)))
        out = T.cross_entropy(logits, np.array([0, 1, 2, 0]), np.ones(4, dtype=bool))
        assert out.item() == pytest.approx(np.log(3.0), rel=1e-12)

    def test_saturated_correct_class(self):
        z = np.zeros((2, 3))
        z[0, 1] = 1e3
        z[1, 2] = 1e3
        out = T.cross_entropy(Tensor(z), np.array([1, 2]), np.ones(2, dtype=bool))
        assert out.item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(12)
        z = rng.normal(size=(4, 3))
        labels = rng.integers(0, 3, size=4)
        mask = np.array([True, False, True, True])
        out = T.cross_entropy(Tensor(z), labels, mask).item()
        # brute-force softmax + log oracle
        ref = 0.0
        rows = np.flatnonzero(mask)
        for i in rows:
            p = np.exp(z[i]) / np.exp(z[i]).sum()
            ref -= np.log(p[labels[i]])
        ref /= len(rows)
        assert out == pytest.approx(ref, abs=1e-12)

    def test_empty_mask_raises(self):
        with pytest.raises(EmptySelectionError):
            T.cross_entropy(Tensor(np.zeros((3, 2))), np.zeros(3, dtype=int),
                            np.zeros(3, dtype=bool))

    def test_gradient(self):
        rng = np.random.default_rng(13)
        z = Tensor(rng.normal(size=(5, 4)))
        labels = rng.integers(0, 4, size=5)
        mask = np.array([True, True, False, True, True])
        params = [("z", z)]
        rep = gradcheck(
            scalar_loss(lambda: T.cross_entropy(z, labels, mask), params), params
        )
        assert rep.passed, rep.failures


class TestAdam:
    def test_zero_grad_moves_only_by_weight_decay(self):
        p = np.array([1.0, -2.0])
        g = np.zeros(2)
        newp, _, _ = adam_step(p, g, np.zeros(2), np.zeros(2), 1, lr=0.01, weight_decay=0.0)
        np.testing.assert_array_equal(newp, p)
        newp_wd, _, _ = adam_step(p, g, np.zeros(2), np.zeros(2), 1, lr=0.01, weight_decay=5e-4)
        assert not np.array_equal(newp_wd, p)

    def test_first_step_is_lr_times_sign(self):
        p = np.zeros(3)
        g = np.array([1.0, -2.0, 0.5])
        newp, _, _ = adam_step(p, g, np.zeros(3), np.zeros(3), 1, lr=0.01)
        np.testing.assert_allclose(newp, -0.01 * np.sign(g), rtol=1e-6)

    def test_unit_grad_delta(self):
        newp, _, _ = adam_step(np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1), 1, lr=0.01)
        assert newp[0] == pytest.approx(-0.01, rel=1e-7)

    def test_optimizer_class_descends(self):
        w = Tensor([5.0])
        opt = Adam([w], lr=0.1)
        for _ in range(50):
            tape = Tape()
            tape.watch(w)
            tape.backward(T.tsum(T.mul(w, w)))
            opt.step()
        assert abs(w.data[0]) < 1.0


class TestSsmScan:
    def _random_case(self, rng, b=2, t=5, c=3, s=4):
        p = Tensor(rng.uniform(0.1, 0.95, size=(b, t, c, s)))
        q = Tensor(rng.normal(size=(b, t, c, s)))
        r = Tensor(rng.normal(size=(b, t, s)))
        x = Tensor(rng.normal(size=(b, t, c)))
        return p, q, r, x

    def test_matches_plain_loop(self):
        rng = np.random.default_rng(21)
        p, q, r, x = self._random_case(rng)
        y, h_final = T.ssm_scan(p, q, r, x)
        B, Tn, C, S = p.shape
        h = np.zeros((B, C, S))
        for t in range(Tn):
            h = p.data[:, t] * h + q.data[:, t] * x.data[:, t, :, None]
            np.testing.assert_allclose(
                y.data[:, t], np.einsum("bcs,bs->bc", h, r.data[:, t]), atol=1e-14
            )
        np.testing.assert_allclose(h_final, h, atol=1e-14)

    def test_gradients_all_inputs(self):
        rng = np.random.default_rng(22)
        p, q, r, x = self._random_case(rng, b=1, t=4, c=2, s=3)
        h0 = Tensor(rng.normal(size=(1, 2, 3)) * 0.2)
        params = [("p", p), ("q", q), ("r", r), ("x", x), ("h0", h0)]

        def loss():
            y, _ = T.ssm_scan(p, q, r, x, h0)
            return T.tsum(T.mul(y, y))

        rep = gradcheck(scalar_loss(loss, params), params)
        assert rep.passed, rep.failures

    def test_superposition(self):
        # With frozen parameters the scan is linear in the input sequence.
        rng = np.random.default_rng(23)
        p, q, r, x1 = self._random_case(rng)
        x2 = Tensor(rng.normal(size=x1.shape))
        y1, _ = T.ssm_scan(p, q, r, x1)
        y2, _ = T.ssm_scan(p, q, r, x2)
        y12, _ = T.ssm_scan(p, q, r, Tensor(x1.data + x2.data))
        np.testing.assert_allclose(y12.data, y1.data + y2.data, atol=1e-12)


class TestGradcheckHarness:
    def test_reports_corrupted_gradient(self):
        # Negative control: a wrong analytic gradient must be flagged.
        x = Tensor([1.0, 2.0])
        params = [("x", x)]

        def loss_fn():
            tape = Tape()
            tape.watch(x)
            out = T.tsum(T.mul(x, x))
            return out

        rep = gradcheck(loss_fn, params)
        assert rep.passed
        x.grad = None

        def corrupted_loss_fn():
            tape = Tape()
            tape.watch(x)
            data = x.data * x.data

            def bad_backward(g):
                return (g * 3.0 * x.data,)  # wrong factor

            return T.tsum(T.record(data, (x,), bad_backward))

        rep = gradcheck(corrupted_loss_fn, params)
        assert not rep.passed
        assert rep.failures and isinstance(rep, GradCheckReport)
