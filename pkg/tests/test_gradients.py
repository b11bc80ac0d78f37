"""Finite-difference checks for every differentiable layer."""

import numpy as np
import pytest

import gradcheck as G
from shapecomp import metrics as M
from shapecomp import tensor as T
from shapecomp.encoder import Encoder, EncoderSpec
from shapecomp.tensor import Tensor

TOL = 1e-4
CHEAP = ["matmul", "pointwise_mlp", "softmax", "layer_norm", "batch_norm", "relu", "tanh", "maxpool"]


class TestLayerGradients:
    @pytest.mark.parametrize("name", CHEAP)
    def test_hundred_seeds(self, name):
        assert max(G.layer_errors(name)) < TOL

    @pytest.mark.parametrize("name", ["mhsa_block", "decoder"])
    def test_composite_blocks(self, name):
        assert max(G.layer_errors(name, range(10))) < TOL

    def test_exact_zero_gradient_not_flagged(self):
        # relative error is normwise, so zero-gradient entries are fine
        assert G.rel_error([np.zeros(2), np.ones(2)], [np.full(2, 1e-12), np.ones(2)]) < 1e-9


class TestElementwiseGradients:
    @pytest.mark.parametrize("op", [
        lambda t: t[0] * t[1], lambda t: t[0] - t[1], lambda t: t[0] / (t[1] * t[1] + 1.0),
        lambda t: T.exp(t[0]) + T.sqrt(t[1] * t[1] + 1.0), lambda t: (t[0] ** 3) * t[1],
    ])
    def test_binary(self, op):
        rng = np.random.default_rng(0)
        assert G.check(op, [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]) < TOL

    def test_broadcast_add(self):
        rng = np.random.default_rng(1)
        assert G.check(lambda t: t[0] + t[1], [rng.normal(size=(4, 3)), rng.normal(size=3)]) < TOL

    def test_shape_ops(self):
        rng = np.random.default_rng(2)
        build = lambda t: T.concat([t[0].reshape(3, 4).swapaxes(0, 1), t[1]], axis=-1)[1:, ::2]
        assert G.check(build, [rng.normal(size=(12,)), rng.normal(size=(4, 2))]) < TOL

    def test_take_with_repeats(self):
        rng = np.random.default_rng(3)
        idx = np.array([0, 2, 2, 1])
        assert G.check(lambda t: t[0][idx] * 2.0, [rng.normal(size=(3, 2))]) < TOL

    def test_norm(self):
        rng = np.random.default_rng(4)
        assert G.check(lambda t: T.norm(t[0]), [rng.normal(size=(5, 3))]) < TOL

    def test_mean_and_sum_axes(self):
        rng = np.random.default_rng(5)
        build = lambda t: t[0].mean(axis=0) + t[0].sum(axis=1, keepdims=True)
        assert G.check(build, [rng.normal(size=(3, 3))]) < TOL


class TestEncoderGradient:
    def test_tmlp_toy(self):
        spec = EncoderSpec("TMLP", widths=(8, 8, 16), pooled_layers=(2,), heads=2, attn_dim=8,
                           attn_after=1, ff_dim=8, dropout_rate=0.1)
        enc = Encoder(spec).eval()
        rng = np.random.default_rng(0)
        x = rng.normal(size=(8, 3))
        err = G._module_check(enc, lambda t: enc(t[0]), [x], rng)
        assert err < TOL

    @pytest.mark.parametrize("variant", ["MLP", "MSF", "CMLP"])
    def test_other_variants_train_mode(self, variant):
        spec = EncoderSpec(variant, widths=(4, 5, 6), pooled_layers=(1, 2) if variant != "MLP" else (2,))
        enc = Encoder(spec)
        rng = np.random.default_rng(1)
        err = G._module_check(enc, lambda t: enc(t[0]), [rng.normal(size=(2, 6, 3))], rng)
        assert err < TOL


class TestLossGradients:
    def test_emd_analytic(self):
        rng = np.random.default_rng(0)
        p, q = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        pred = Tensor(p, requires_grad=True)
        M.emd_loss(pred, q, exact=True).backward()
        mapping = M.emd_exact(p, q).mapping
        diff = p - q[mapping]
        expected = diff / (6 * np.linalg.norm(diff, axis=1, keepdims=True))
        np.testing.assert_allclose(pred.grad, expected, rtol=1e-12, atol=1e-15)

    def test_emd_zero_at_target(self):
        q = np.random.default_rng(1).normal(size=(5, 3))
        pred = Tensor(q.copy(), requires_grad=True)
        loss = M.emd_loss(pred, q, exact=True)
        loss.backward()
        assert loss.item() == 0.0
        assert np.all(pred.grad == 0.0)

    def test_emd_descent_step(self):
        rng = np.random.default_rng(2)
        p, q = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
        pred = Tensor(p, requires_grad=True)
        loss = M.emd_loss(pred, q, exact=True)
        loss.backward()
        mapping = M.emd_exact(p, q).mapping
        stepped = p - 1e-3 * pred.grad
        assert M.plan_cost(stepped, q, mapping) < loss.item()

    def test_chamfer_loss_matches_metric_and_fd(self):
        rng = np.random.default_rng(3)
        p, q = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
        assert M.chamfer_loss(Tensor(p), q).item() == pytest.approx(M.chamfer(p, q), rel=1e-12)
        # pairings are piecewise constant, so a small step stays inside one cell
        assert G.check(lambda t: M.chamfer_loss(t[0], q), [p]) < TOL

    def test_chamfer_loss_examples(self):
        s1 = np.array([[0.0, 0, 0], [1, 0, 0]])
        s2 = np.array([[0.0, 0, 0], [0, 1, 0]])
        assert M.chamfer_loss(Tensor(s1), s2).item() == pytest.approx(1.0, abs=1e-12)
        assert M.chamfer_loss(Tensor(s1), s1).item() == 0.0
        assert M.chamfer_loss(Tensor(s2), s1).item() == pytest.approx(M.chamfer_loss(Tensor(s1), s2).item())
