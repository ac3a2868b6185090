import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from armor.errors import DataFormatError, DimensionError
from armor.nnet import (
    MlpParams,
    backward,
    ce_grad_logits,
    entropy,
    forward,
    init_mlp,
    load_params,
    loss_ce,
    loss_kl,
    save_params,
    sigmoid,
    softmax,
    softplus,
)


def naive_forward(params, x):
    """Loop-based reference: explicit sums, no matrix products."""
    h = list(map(float, x))
    for k, (w, b) in enumerate(params.layers):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            out.append(s if k == len(params.layers) - 1 else max(s, 0.0))
        h = out
    return np.array(h)


class TestForward:
    def test_zero_network(self):
        params = MlpParams([(np.zeros((3, 4)), np.zeros(4))])
        logits, _ = forward(params, [1.0, 2.0, 3.0])
        assert np.all(logits == 0) and softmax(logits) == pytest.approx(np.full(4, 0.25))

    def test_identity_layer(self):
        x = np.array([0.3, -1.2, 4.0])
        params = MlpParams([(np.eye(3), np.zeros(3))])
        assert np.array_equal(forward(params, x)[0], x)

    def test_matches_naive_reference(self):
        params = init_mlp([5, 7, 3], seed=4)
        x = np.random.default_rng(1).normal(size=(6, 5))
        logits, _ = forward(params, x)
        for row, out in zip(x, logits):
            assert out == pytest.approx(naive_forward(params, row), abs=1e-12)

    def test_deterministic_init(self):
        a, b = init_mlp([4, 8, 2], 9), init_mlp([4, 8, 2], 9)
        x = np.ones(4)
        assert forward(a, x)[0].tobytes() == forward(b, x)[0].tobytes()

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            forward(init_mlp([3, 2], 0), np.ones(4))
        with pytest.raises(DimensionError):
            MlpParams([(np.zeros((3, 4)), np.zeros(4)), (np.zeros((5, 2)), np.zeros(2))])


class TestLosses:
    def test_uniform_logits(self):
        assert loss_ce(np.zeros(10), 3) == pytest.approx(math.log(10), abs=1e-14)

    def test_self_target(self):
        logits = np.array([0.2, -1.0, 2.5])
        p = softmax(logits)
        assert loss_ce(logits, p) == pytest.approx(entropy(p), abs=1e-14)
        assert loss_kl(logits, p) == pytest.approx(0.0, abs=1e-14)

    def test_high_precision_reference(self):
        logits = [1.7, -0.3, 0.05, 3.2]
        target = [0.1, 0.2, 0.3, 0.4]
        mpmath.mp.dps = 50
        z = [mpmath.mpf(str(v)) for v in logits]
        lse = mpmath.log(sum(mpmath.exp(v) for v in z))
        ref = -sum(mpmath.mpf(str(t)) * (v - lse) for t, v in zip(target, z))
        assert loss_ce(logits, target) == pytest.approx(float(ref), rel=1e-14)

    def test_batch_and_bad_target(self):
        out = loss_ce(np.zeros((3, 2)), np.array([0, 1, 1]))
        assert out.shape == (3,)
        with pytest.raises(ValueError):
            loss_ce(np.zeros(2), 5)

    def test_grad_matches_difference(self):
        logits = np.array([0.4, -0.7, 1.1])
        target = np.array([0.2, 0.5, 0.3])
        g = ce_grad_logits(logits, target)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (loss_ce(logits + e, target) - loss_ce(logits - e, target)) / (2 * h)
            assert g[k] == pytest.approx(fd, abs=1e-8)


class TestBackward:
    def test_zero_loss_grad(self):
        params = init_mlp([3, 4, 2], 0)
        _, trace = forward(params, np.ones((2, 3)))
        grads, gx = backward(params, trace, np.zeros((2, 2)))
        assert np.all(grads.flat() == 0) and np.all(gx == 0)

    def test_linear_squared_loss(self):
        rng = np.random.default_rng(0)
        w, b = rng.normal(size=(3, 2)), rng.normal(size=2)
        x, y = rng.normal(size=3), rng.normal(size=2)
        params = MlpParams([(w, b)])
        out, trace = forward(params, x)
        # loss = 0.5 |xW + b - y|^2
        grads, gx = backward(params, trace, out - y)
        resid = x @ w + b - y
        assert grads.layers[0][0] == pytest.approx(np.outer(x, resid))
        assert grads.layers[0][1] == pytest.approx(resid)
        assert gx == pytest.approx(w @ resid)

    def test_central_difference(self):
        params = init_mlp([4, 6, 3], 2)
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=(5, 4)), rng.integers(0, 3, 5)

        def total(p, xx):
            return float(np.sum(loss_ce(forward(p, xx)[0], y)))

        logits, trace = forward(params, x)
        grads, gx = backward(params, trace, ce_grad_logits(logits, y))
        h = 1e-5
        flat = params.flat()
        analytic = grads.flat()
        for idx in rng.choice(flat.size, 12, replace=False):
            e = np.zeros(flat.size)
            e[idx] = h
            fd = (total(_unflat(params, flat + e), x) - total(_unflat(params, flat - e), x)) / (2 * h)
            assert analytic[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)
        e = np.zeros_like(x)
        e[2, 1] = h
        fd = (total(params, x + e) - total(params, x - e)) / (2 * h)
        assert gx[2, 1] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def _unflat(template, flat):
    layers, k = [], 0
    for w, b in template.layers:
        nw = flat[k:k + w.size].reshape(w.shape)
        k += w.size
        nb = flat[k:k + b.size]
        k += b.size
        layers.append((nw, nb))
    return MlpParams(layers)


class TestScalars:
    def test_softplus(self):
        assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-15)
        assert softplus(50.0) == pytest.approx(50.0, rel=1e-12)
        mpmath.mp.dps = 50
        ref = float(mpmath.log1p(mpmath.exp(-50)))
        assert softplus(-50.0) == pytest.approx(ref, rel=1e-12)

    def test_sigmoid_is_softplus_slope(self):
        for z in (-30.0, -1.0, 0.0, 2.0, 40.0):
            h = 1e-6
            assert sigmoid(z) == pytest.approx((softplus(z + h) - softplus(z - h)) / (2 * h), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-200, 200)),
       st.floats(-500, 500))
def test_softmax_normalized_and_shift_invariant(logits, shift):
    p = softmax(logits)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(softmax(logits + shift), p, atol=1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_mlp([3, 5, 2], 8)
        path = tmp_path / "m.bin"
        save_params(params, path)
        again = load_params(path)
        assert again.flat().tobytes() == params.flat().tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAMODEL" + bytes(32))
        with pytest.raises(DataFormatError):
            load_params(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.bin"
        save_params(init_mlp([3, 2], 0), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError):
            load_params(path)
