import numpy as np
import pytest

import sensopt.autodiff as ad
from sensopt.autodiff import Tape, Tensor, backward
from sensopt.errors import NonFiniteError, ShapeError
from sensopt.nets import forward

from conftest import random_image
from oracles import (
    central_difference,
    central_difference_filtered,
    conv2d_loops,
    matmul_loops,
    net_forward64,
    pool2d_loops,
    rel_err,
    softmax_xent64,
)


class TestConv2d:
    def test_scalar_product(self):
        out = ad.conv2d(Tensor(np.full((1, 1, 1, 1), 3.0)),
                        Tensor(np.full((1, 1, 1, 1), 2.0)),
                        Tensor(np.zeros(1)), stride=1, pad=0)
        assert out.data.reshape(()) == pytest.approx(6.0)

    def test_zero_input_gives_bias_planes(self, rng):
        w = Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
        out = ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), w,
                        Tensor(np.array([1.0, -1.0])), stride=1, pad=1)
        assert np.all(out.data[0, 0] == 1.0)
        assert np.all(out.data[0, 1] == -1.0)

    def test_matches_loop_oracle(self, rng):
        x = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
        w = rng.normal(size=(2, 1, 3, 3)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1)
        want = conv2d_loops(x, w, b, stride=1, pad=1)
        assert rel_err(out.data, want).max() <= 1e-6

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_strides_and_padding(self, rng, stride, pad):
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        want = conv2d_loops(x, w, b, stride=stride, pad=pad)
        assert out.data.shape == want.shape
        assert rel_err(out.data, want).max() <= 1e-6

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(ShapeError, match="channels 2 != weight input channels 3"):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))),
                      Tensor(np.zeros(1)))

    def test_kernel_does_not_fit(self):
        with pytest.raises(ShapeError, match="does not fit"):
            ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))),
                      Tensor(np.zeros(1)))


class TestPool2d:
    def test_constant_field(self):
        out = ad.pool2d(Tensor(np.full((1, 2, 4, 4), 0.7)))
        assert out.data.shape == (1, 2, 2, 2)
        assert np.all(out.data == np.float32(0.7))

    def test_unique_max_and_backward_routing(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        with Tape() as tape:
            out = ad.pool2d(x)
            total = ad.tsum(out)
        assert out.data.reshape(()) == 4.0
        backward(tape, total)
        assert np.array_equal(x.grad, np.array([[[[0, 0], [0, 1]]]], dtype=np.float32))

    def test_tie_routes_to_first_in_row_major_scan(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0))
        with Tape() as tape:
            total = ad.tsum(ad.pool2d(x))
        backward(tape, total)
        assert np.array_equal(x.grad, np.array([[[[1, 0], [0, 0]]]], dtype=np.float32))

    def test_matches_loop_oracle(self, rng):
        x = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        out = ad.pool2d(Tensor(x))
        assert np.array_equal(out.data.astype(np.float64), pool2d_loops(x))

    def test_odd_dims_error(self):
        with pytest.raises(ShapeError, match="even"):
            ad.pool2d(Tensor(np.zeros((1, 1, 3, 4))))


class TestAffineRelu:
    def test_identity_weights(self, rng):
        x = rng.normal(size=(3, 4)).astype(np.float32)
        out = ad.affine(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        assert np.array_equal(out.data, x)

    def test_relu_definition(self):
        out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, np.array([0.0, 0.0, 2.0], dtype=np.float32))

    def test_matmul_matches_loop_oracle(self, rng):
        a = rng.normal(size=(2, 3)).astype(np.float32)
        b = rng.normal(size=(3, 4)).astype(np.float32)
        out = ad.matmul(Tensor(a), Tensor(b))
        assert rel_err(out.data, matmul_loops(a, b)).max() <= 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError, match="features 3 != weight rows 4"):
            ad.affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, probs = ad.softmax_cross_entropy(Tensor(np.zeros((2, 4))), [0, 3])
        assert loss.item() == pytest.approx(np.log(4.0), rel=1e-6)
        assert np.allclose(probs.data, 0.25)

    def test_saturated_logit(self):
        logits = np.zeros((1, 3), dtype=np.float32)
        logits[0, 1] = 1000.0
        loss, _ = ad.softmax_cross_entropy(Tensor(logits), [1])
        assert loss.item() < 1e-6

    def test_matches_float64_oracle(self, rng):
        logits = rng.normal(size=(2, 5)).astype(np.float32) * 3
        labels = [3, 0]
        loss, probs = ad.softmax_cross_entropy(Tensor(logits), labels)
        want_loss, want_probs = softmax_xent64(logits, labels)
        assert rel_err(loss.item(), want_loss).max() <= 1e-5
        assert rel_err(probs.data, want_probs).max() <= 1e-5

    def test_probs_rows_sum_to_one(self, rng):
        logits = rng.normal(size=(8, 6)).astype(np.float32) * 10
        _, probs = ad.softmax_cross_entropy(Tensor(logits), [0] * 8)
        assert np.abs(probs.data.sum(axis=1) - 1.0).max() <= 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError, match="labels must be in"):
            ad.softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        with Tape() as tape:
            out = ad.tsum(x)
        backward(tape, out)
        assert np.array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_sum_of_squares_gives_2x(self, rng):
        x = Tensor(rng.normal(size=(5,)).astype(np.float32))
        with Tape() as tape:
            out = ad.tsum(ad.square(x))
        backward(tape, out)
        assert np.allclose(x.grad, 2 * x.data, rtol=1e-6)

    def test_fanout_accumulates(self):
        x = Tensor(np.array([2.0]))
        with Tape() as tape:
            out = ad.tsum(ad.add(ad.mul(x, x), x))  # x^2 + x -> 2x + 1 = 5
        backward(tape, out)
        assert x.grad[0] == pytest.approx(5.0)

    def test_calling_twice_doubles_leaf_grads(self):
        x = Tensor(np.array([1.0, 2.0]))
        with Tape() as tape:
            out = ad.tsum(ad.square(x))
        backward(tape, out)
        first = x.grad.copy()
        backward(tape, out)
        assert np.array_equal(x.grad, 2 * first)

    def test_non_scalar_output_rejected(self):
        x = Tensor(np.zeros((2, 2)))
        with Tape() as tape:
            out = ad.square(x)
        with pytest.raises(ShapeError, match="scalar"):
            backward(tape, out)

    def test_output_not_on_tape_rejected(self):
        x = Tensor(np.zeros(1))
        with Tape() as tape:
            ad.square(x)
        with pytest.raises(ShapeError, match="not recorded"):
            backward(tape, Tensor(np.zeros(())))

    def test_net_input_gradient_matches_finite_differences(self, tiny_net, rng):
        """Class-logit gradient w.r.t. the image vs a float64 FD oracle."""
        img = random_image(rng)
        x = Tensor(img[None])
        with Tape() as tape:
            rec = forward(tiny_net, x)
            out = rec.logits[(0, 1)]
        backward(tape, out)

        def f(flat):
            img64 = flat.reshape(img[None].shape)
            return net_forward64(tiny_net, img64)["logits"][0, 1]

        coords = rng.choice(img.size, size=30, replace=False)
        fd, valid = central_difference_filtered(f, img[None].ravel(), coords)
        analytic = x.grad.ravel()[coords]
        assert valid.sum() >= 20  # enough coordinates away from relu kinks
        assert rel_err(analytic[valid], fd[valid]).max() <= 1e-3


_ELEMENTWISE_OPS = [
    ("add", lambda a, b: ad.add(a, b), 2, {}),
    ("sub", lambda a, b: ad.sub(a, b), 2, {}),
    ("mul", lambda a, b: ad.mul(a, b), 2, {}),
    ("square", lambda a: ad.square(a), 1, {}),
    ("sigmoid", lambda a: ad.sigmoid(a), 1, {}),
    ("sin", lambda a: ad.sin(a), 1, {}),
    ("cos", lambda a: ad.cos(a), 1, {}),
    ("sqrt", lambda a: ad.sqrt(a), 1, {"positive": True}),
    ("reciprocal", lambda a: ad.reciprocal(a), 1, {"positive": True}),
    ("relu", lambda a: ad.relu(a), 1, {"kink": 0.0}),
    ("abs", lambda a: ad.absolute(a), 1, {"kink": 0.0}),
]


@pytest.mark.parametrize("name,op,arity,opts", _ELEMENTWISE_OPS, ids=[e[0] for e in _ELEMENTWISE_OPS])
def test_elementwise_gradients_match_finite_differences(name, op, arity, opts):
    """Property check: 100 randomized small tensors per op."""
    rng = np.random.default_rng(99)
    for trial in range(100):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        arrays = []
        for _ in range(arity):
            a = rng.normal(size=shape).astype(np.float32)
            if opts.get("positive"):
                a = np.abs(a) + 0.5
            kink = opts.get("kink")
            if kink is not None:
                # keep inputs away from the kink so FD stays valid
                a = np.where(np.abs(a - kink) < 0.05, a + 0.1, a).astype(np.float32)
            arrays.append(a)
        tensors = [Tensor(a) for a in arrays]
        weights = rng.normal(size=shape).astype(np.float32)
        with Tape() as tape:
            out = ad.tsum(ad.mul(op(*tensors), Tensor(weights)))
        backward(tape, out)

        for idx, (t, a) in enumerate(zip(tensors, arrays)):
            def f(flat):
                vals = [x.astype(np.float64) for x in arrays]
                vals[idx] = flat.reshape(shape)
                out64 = _op64(name, vals)
                return float((out64 * weights.astype(np.float64)).sum())
            coords = rng.choice(a.size, size=min(3, a.size), replace=False)
            fd = central_difference(f, a.astype(np.float64).ravel(), coords, h=1e-3)
            analytic = t.grad.ravel()[coords]
            assert rel_err(analytic, fd, floor=1e-3).max() <= 1e-3, f"{name} trial {trial}"


def _op64(name, vals):
    a = vals[0]
    if name == "add":
        return vals[0] + vals[1]
    if name == "sub":
        return vals[0] - vals[1]
    if name == "mul":
        return vals[0] * vals[1]
    if name == "square":
        return a * a
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-a))
    if name == "sin":
        return np.sin(a)
    if name == "cos":
        return np.cos(a)
    if name == "sqrt":
        return np.sqrt(a)
    if name == "reciprocal":
        return 1.0 / a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "abs":
        return np.abs(a)
    raise KeyError(name)


class TestStructuralOps:
    def test_reshape_transpose_roundtrip_gradient(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        w = rng.normal(size=(4, 3, 2)).astype(np.float32)
        with Tape() as tape:
            out = ad.tsum(ad.mul(ad.transpose(x, (2, 1, 0)), Tensor(w)))
        backward(tape, out)
        assert np.allclose(x.grad, w.transpose(2, 1, 0))

    def test_take_scatters_gradient(self, rng):
        x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        with Tape() as tape:
            out = ad.tsum(x[(1, slice(1, 3))])
        backward(tape, out)
        want = np.zeros((3, 4), dtype=np.float32)
        want[1, 1:3] = 1.0
        assert np.array_equal(x.grad, want)

    def test_stack_splits_gradient(self, rng):
        a = Tensor(rng.normal(size=(2, 2)).astype(np.float32))
        b = Tensor(rng.normal(size=(2, 2)).astype(np.float32))
        w = rng.normal(size=(2, 2, 2)).astype(np.float32)
        with Tape() as tape:
            out = ad.tsum(ad.mul(ad.stack([a, b], axis=0), Tensor(w)))
        backward(tape, out)
        assert np.allclose(a.grad, w[0])
        assert np.allclose(b.grad, w[1])

    def test_roll2d_inverts_in_backward(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4)).astype(np.float32))
        w = rng.normal(size=(1, 4, 4)).astype(np.float32)
        with Tape() as tape:
            out = ad.tsum(ad.mul(ad.roll2d(x, 1, -2), Tensor(w)))
        backward(tape, out)
        assert np.allclose(x.grad, np.roll(w, (-1, 2), axis=(-2, -1)))

    def test_upsample2d_sums_blocks(self, rng):
        x = Tensor(rng.normal(size=(2, 2)).astype(np.float32))
        with Tape() as tape:
            out = ad.tsum(ad.upsample2d(x, 3))
        backward(tape, out)
        assert np.allclose(x.grad, 9.0)

    def test_broadcasting_add_unbroadcasts(self, rng):
        a = Tensor(rng.normal(size=(3, 1)).astype(np.float32))
        b = Tensor(rng.normal(size=(1, 4)).astype(np.float32))
        with Tape() as tape:
            out = ad.tsum(ad.add(a, b))
        backward(tape, out)
        assert np.allclose(a.grad, 4.0)
        assert np.allclose(b.grad, 3.0)


class TestInvariants:
    def test_forward_determinism_bit_identical(self, tiny_net, rng):
        img = random_image(rng)[None]
        a = forward(tiny_net, img).logits.data
        b = forward(tiny_net, img).logits.data
        assert a.tobytes() == b.tobytes()

    def test_nan_inf_raise_instead_of_storing(self):
        big = Tensor(np.full(4, 1e30))
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            ad.square(big)  # overflows float32 to inf
        with pytest.raises(NonFiniteError):
            Tensor(np.array([np.nan]))

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones(3))
        out = ad.square(x)
        assert out.data is not None
        with Tape() as tape:
            pass
        assert len(tape) == 0
