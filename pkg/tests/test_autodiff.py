"""Tests for the reverse-mode tape: values, gradients, optimizer, storage."""
import numpy as np
import pytest

import moldiff.autodiff as ad


def p(x):
    return ad.parameter(np.asarray(x, dtype=np.float64))


def c(x):
    return ad.constant(np.asarray(x, dtype=np.float64))


class TestValues:
    def test_elementwise_values_match_numpy(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(4, 5))
        assert np.array_equal(ad.add(p(a), p(b)).value, a + b)
        assert np.array_equal(ad.sub(p(a), p(b)).value, a - b)
        assert np.array_equal(ad.mul(p(a), p(b)).value, a * b)
        assert np.allclose(ad.div(p(a), p(1.0 + b * b)).value, a / (1 + b * b))
        assert np.array_equal(ad.relu(p(a)).value, np.maximum(a, 0))
        assert np.allclose(ad.tanh(p(a)).value, np.tanh(a))
        assert np.allclose(ad.exp(p(a)).value, np.exp(a))

    def test_sigmoid_matches_closed_form_and_is_stable(self):
        x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        got = ad.sigmoid(p(x)).value
        assert got[0] == 0.0 and got[4] == 1.0
        assert got[2] == 0.5
        assert np.allclose(got[1], 1 / (1 + np.exp(30.0)))

    def test_logsigmoid_stable_at_extremes(self):
        x = np.array([-745.0, 0.0, 745.0])
        got = ad.logsigmoid(p(x)).value
        assert np.isfinite(got).all()
        assert got[1] == pytest.approx(-np.log(2.0), abs=1e-15)
        assert got[0] == pytest.approx(-745.0, rel=1e-12)

    def test_matmul_rank_and_shape_errors(self):
        with pytest.raises(ad.ShapeMismatchError):
            ad.matmul(p(np.ones((2, 3))), p(np.ones((4, 2))))
        with pytest.raises(ad.ShapeMismatchError):
            ad.matmul(p(np.ones(3)), p(np.ones((3, 2))))

    def test_div_by_zero_raises(self):
        with pytest.raises(ZeroDivisionError):
            ad.div(p(np.ones(3)), p(np.array([1.0, 0.0, 2.0])))

    def test_log_and_sqrt_domain_errors(self):
        with pytest.raises(ValueError):
            ad.log(p(np.array([1.0, -1.0])))
        with pytest.raises(ValueError):
            ad.sqrt(p(np.array([-1e-12])))

    def test_concat_gather_scatter_values(self):
        a, b = np.arange(6.0).reshape(2, 3), np.arange(6.0, 15.0).reshape(3, 3)
        cat = ad.concat([p(a), p(b)], axis=0)
        assert np.array_equal(cat.value, np.concatenate([a, b], axis=0))
        idx = np.array([2, 0, 0, 4])
        g = ad.gather(p(np.arange(10.0).reshape(5, 2)), idx)
        assert np.array_equal(g.value, np.arange(10.0).reshape(5, 2)[idx])
        s = ad.scatter_add(p(np.ones((4, 2))), np.array([1, 1, 0, 2]), 3)
        assert np.array_equal(s.value, np.array([[1, 1], [2, 2], [1, 1.0]]))

    def test_gather_bounds_checked(self):
        with pytest.raises(IndexError):
            ad.gather(p(np.ones((3, 2))), np.array([0, 3]))
        with pytest.raises(IndexError):
            ad.scatter_add(p(np.ones((3, 2))), np.array([0, -1, 1]), 2)


class TestBackward:
    def test_scalar_only(self):
        x = p(np.ones(3))
        with pytest.raises(ValueError):
            ad.mul(x, x).backward()

    def test_constants_get_no_grad_and_prune_the_tape(self):
        x, k = p(2.0), c(3.0)
        y = ad.tensor_sum(ad.mul(x, k))
        y.backward()
        assert x.grad == pytest.approx(3.0)
        assert k.grad is None

    def test_backward_resets_grads_between_calls(self):
        x = p(np.array([1.0, 2.0]))
        y = ad.tensor_sum(ad.mul(x, x))
        y.backward()
        first = x.grad.copy()
        y.backward()
        assert np.array_equal(x.grad, first)

    def test_fanout_accumulates(self):
        # y = x*x + x  =>  dy/dx = 2x + 1
        x = p(3.0)
        y = ad.tensor_sum(ad.add(ad.mul(x, x), x))
        y.backward()
        assert x.grad == pytest.approx(7.0)

    def test_broadcast_add_gradient_shapes(self):
        a, b = p(np.ones((3, 4))), p(np.ones(4))
        ad.tensor_sum(ad.add(a, b)).backward()
        assert a.grad.shape == (3, 4) and b.grad.shape == (4,)
        assert np.array_equal(b.grad, np.full(4, 3.0))

    def test_deep_chain_does_not_recurse(self):
        x = p(1.0)
        y = x
        for _ in range(5000):
            y = ad.mul(y, c(1.0001))
        ad.tensor_sum(y).backward()
        assert x.grad == pytest.approx(1.0001 ** 5000, rel=1e-9)


def _random_graph_fn(rng):
    """A random small computation over three arrays ending in a scalar."""
    steps = rng.integers(3, 7)
    choices = rng.integers(0, 9, size=steps)
    axis = int(rng.integers(0, 2))

    def fn(leaves):
        a, b, w = leaves
        vals = [a, b]
        for op in choices:
            x, y = vals[-1], vals[-2]
            if op == 0:
                vals.append(ad.add(x, y))
            elif op == 1:
                vals.append(ad.sub(x, y))
            elif op == 2:
                vals.append(ad.mul(x, y))
            elif op == 3:
                vals.append(ad.tanh(x))
            elif op == 4:
                vals.append(ad.relu(ad.add(x, c(0.1))))
            elif op == 5:
                vals.append(ad.sigmoid(x))
            elif op == 6:
                vals.append(ad.div(x, ad.add(ad.mul(y, y), c(1.0))))
            elif op == 7:
                vals.append(ad.exp(ad.mul(x, c(0.3))))
            else:
                vals.append(ad.mul(ad.logsigmoid(x), c(0.5)))
        h = ad.matmul(vals[-1], w)
        h = ad.concat([h, ad.mul(h, c(0.5))], axis=1)
        return ad.mean(ad.tensor_sum(h, axis=axis))

    return fn


class TestGradCheck:
    def test_hundred_random_graphs_match_finite_differences(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            n, m = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            args = [rng.normal(size=(n, m)), rng.normal(size=(n, m)),
                    rng.normal(size=(m, 3))]
            err = ad.grad_check(_random_graph_fn(rng), args)
            worst = max(worst, err)
        assert worst < 1e-5, f"worst relative error {worst:.3e}"

    def test_gather_scatter_reshape_transpose_grads(self):
        rng = np.random.default_rng(3)
        idx = np.array([0, 2, 2, 1])

        def fn(leaves):
            (x,) = leaves
            g = ad.gather(x, idx)
            s = ad.scatter_add(g, np.array([1, 0, 1, 1]), 2)
            r = ad.reshape(s, (4,))
            t = ad.transpose(ad.reshape(r, (2, 2)), (1, 0))
            return ad.tensor_sum(ad.mul(t, t))

        assert ad.grad_check(fn, [rng.normal(size=(3, 2))]) < 1e-6

    def test_matmul_and_reductions_grads(self):
        rng = np.random.default_rng(4)

        def fn(leaves):
            a, w = leaves
            h = ad.relu(ad.matmul(a, w))
            m1 = ad.mean(h, axis=0, keepdims=True)
            return ad.tensor_sum(ad.mul(m1, m1))

        assert ad.grad_check(fn, [rng.normal(size=(5, 3)),
                                  rng.normal(size=(3, 4))]) < 1e-6


class TestMlpReference:
    def test_two_layer_mlp_matches_plain_numpy(self):
        # independent forward/backward in raw numpy, no tape involved
        rng = np.random.default_rng(11)
        x = rng.normal(size=(6, 4))
        w1, b1 = rng.normal(size=(4, 8)), rng.normal(size=8)
        w2, b2 = rng.normal(size=(8, 2)), rng.normal(size=2)

        h_pre = x @ w1 + b1
        h = np.maximum(h_pre, 0.0)
        y = h @ w2 + b2
        loss_ref = (y * y).mean()

        g_y = 2.0 * y / y.size
        g_w2 = h.T @ g_y
        g_b2 = g_y.sum(axis=0)
        g_h = g_y @ w2.T
        g_pre = g_h * (h_pre > 0)
        g_w1 = x.T @ g_pre
        g_b1 = g_pre.sum(axis=0)

        tw1, tb1, tw2, tb2 = p(w1), p(b1), p(w2), p(b2)
        th = ad.relu(ad.add(ad.matmul(c(x), tw1), tb1))
        ty = ad.add(ad.matmul(th, tw2), tb2)
        loss = ad.mean(ad.mul(ty, ty))
        loss.backward()

        assert loss.value == pytest.approx(loss_ref, rel=1e-12)
        for tensor, ref in [(tw1, g_w1), (tb1, g_b1), (tw2, g_w2), (tb2, g_b2)]:
            assert np.allclose(tensor.grad, ref, rtol=1e-10, atol=1e-12)


class TestAdam:
    def test_two_steps_match_hand_recurrence(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w0 = np.array([1.0, -2.0])
        g1 = np.array([0.5, 0.25])
        g2 = np.array([-0.1, 0.4])

        # independent scalar recurrence
        m = v = np.zeros(2)
        w = w0.copy()
        for k, g in enumerate((g1, g2), start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** k)
            vhat = v / (1 - b2 ** k)
            w = w - lr * mhat / (np.sqrt(vhat) + eps)

        params = {"w": w0.copy()}
        state = ad.AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        params, state = ad.adam_step(params, {"w": g1}, state)
        params, state = ad.adam_step(params, {"w": g2}, state)
        assert state.step == 2
        assert np.allclose(params["w"], w, rtol=0, atol=1e-15)

    def test_missing_grad_leaves_parameter_untouched(self):
        params = {"a": np.ones(2), "b": np.full(2, 5.0)}
        state = ad.AdamState(lr=0.5)
        params, state = ad.adam_step(params, {"a": np.ones(2)}, state)
        assert np.array_equal(params["b"], np.full(2, 5.0))
        assert not np.array_equal(params["a"], np.ones(2))

    def test_nan_gradient_aborts_naming_the_parameter(self):
        params = {"fine": np.ones(2), "broken": np.ones(2)}
        grads = {"fine": np.ones(2), "broken": np.array([1.0, np.nan])}
        with pytest.raises(ValueError, match="broken"):
            ad.adam_step(params, grads, ad.AdamState(lr=0.1))

    def test_unknown_grad_name_rejected(self):
        with pytest.raises(ValueError):
            ad.adam_step({"a": np.ones(2)}, {"zz": np.ones(2)},
                         ad.AdamState(lr=0.1))


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        params = {
            "alpha": rng.normal(size=(3, 4)),
            "beta.w": np.array(0.1 + 0.2),        # classic non-representable sum
            "gamma": rng.normal(size=(2, 2, 5)),
            "empty": np.zeros((0, 3)),
        }
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, params)
        back = ad.load_checkpoint(path)
        assert list(back) == list(params)
        for k in params:
            assert back[k].shape == np.asarray(params[k]).shape
            assert np.array_equal(
                np.asarray(params[k], dtype=np.float64), back[k]
            ), k
        # byte-identical on re-save
        path2 = tmp_path / "again.ckpt"
        ad.save_checkpoint(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE!" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            ad.load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, {"w": np.ones((4, 4))})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            ad.load_checkpoint(path)
