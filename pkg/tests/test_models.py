"""Encoder/projector/snapshot behavior and checkpoint round-trips."""

import numpy as np

from cssl import autodiff as ad
from cssl.autodiff import Tensor, backward, grad_check
from cssl.models import (MLP, ModelArch, build_model, forward_encoder,
                         forward_projector, forward_snapshot, forward_temporal,
                         load_checkpoint, params_hash, reset_temporal,
                         save_checkpoint, take_snapshot)
from cssl.optim import SGD, ParamGroup

ARCH = ModelArch(input_dim=6, hidden=(8,), feature_dim=5, proj_hidden=8,
                 proj_dim=4, temporal_hidden=8)


def small_bundle(seed=0, temporal=False, predictor=False):
    return build_model(ARCH, seed, with_temporal=temporal, with_predictor=predictor)


class TestForward:
    def test_zero_final_layer_gives_zero_output(self):
        bundle = small_bundle()
        bundle.encoder.layers[-1].W.data[:] = 0.0
        bundle.encoder.layers[-1].b.data[:] = 0.0
        out = forward_encoder(bundle, Tensor(np.random.default_rng(0).random((3, 6))))
        assert np.all(out.data == 0.0)

    def test_single_linear_encoder_is_affine(self):
        rng = np.random.default_rng(1)
        mlp = MLP([6, 5], batchnorm=False, rng=rng)
        x = rng.standard_normal((4, 6))
        out = mlp.forward(Tensor(x))
        expected = x @ mlp.layers[0].W.data + mlp.layers[0].b.data
        assert np.allclose(out.data, expected)

    def test_projector_zero_features_zero_bias(self):
        bundle = small_bundle()
        for layer in bundle.projector.layers:
            layer.b.data[:] = 0.0
        out = forward_projector(bundle, Tensor(np.zeros((3, 5))))
        assert np.allclose(out.data, 0.0)

    def test_temporal_identity_weights(self):
        bundle = small_bundle(temporal=True)
        m = bundle.temporal
        # first linear embeds the 5 features into the first 5 hidden slots
        m.layers[0].W.data[:] = 0.0
        m.layers[0].W.data[:5, :5] = np.eye(5)
        m.layers[0].b.data[:] = 0.0
        m.bns[0].gamma.data[:] = 1.0
        m.bns[0].beta.data[:] = 0.0
        m.layers[1].W.data[:] = 0.0
        m.layers[1].W.data[:5, :5] = np.eye(5)
        m.layers[1].b.data[:] = 0.0
        x = np.abs(np.random.default_rng(2).standard_normal((4, 5))) + 0.5
        # eval mode (running stats are identity) and positive inputs keep relu open
        out = forward_temporal(bundle, Tensor(x), train=False)
        assert np.allclose(out.data, x, atol=1e-6)

    def test_temporal_output_dim_equals_feature_dim(self):
        bundle = small_bundle(temporal=True)
        out = forward_temporal(bundle, Tensor(np.random.default_rng(0).random((3, 5))))
        assert out.shape == (3, 5)

    def test_encoder_grads_pass_grad_check(self):
        bundle = small_bundle()
        x = Tensor(np.random.default_rng(3).standard_normal((4, 6)))
        params = list(bundle.encoder.named_parameters().values())

        def f(*_):
            return ad.sum_(forward_encoder(bundle, x, train=True) ** 2)

        assert grad_check(f, params) < 1e-4

    def test_encoder_temporal_composite_grads(self):
        bundle = small_bundle(temporal=True)
        x = Tensor(np.random.default_rng(4).standard_normal((4, 6)))
        params = (list(bundle.encoder.named_parameters().values())
                  + list(bundle.temporal.named_parameters().values()))

        def f(*_):
            feats = forward_encoder(bundle, x, train=True)
            return ad.sum_(forward_temporal(bundle, feats, train=True) ** 2)

        assert grad_check(f, params) < 1e-4


class TestSnapshot:
    def test_matches_live_model_at_boundary(self):
        bundle = small_bundle()
        snap = take_snapshot(bundle)
        x = Tensor(np.random.default_rng(5).standard_normal((4, 6)))
        live = forward_encoder(bundle, x, train=False)
        frozen = forward_snapshot(snap, x)
        assert np.array_equal(live.data, frozen.data)

    def test_unchanged_after_optimizer_step(self):
        bundle = small_bundle()
        snap = take_snapshot(bundle)
        x = Tensor(np.random.default_rng(6).standard_normal((4, 6)))
        before = forward_snapshot(snap, x).data.copy()
        hash_before = snap.state_hash()

        opt = SGD([ParamGroup("enc", bundle.encoder.parameters())])
        loss = ad.sum_(forward_encoder(bundle, x, train=True) ** 2)
        backward(loss)
        opt.step({"enc": 0.1})

        assert snap.state_hash() == hash_before
        assert np.array_equal(forward_snapshot(snap, x).data, before)
        live = forward_encoder(bundle, x, train=False)
        assert not np.array_equal(live.data, before)

    def test_no_gradient_leaks_into_snapshot(self):
        bundle = small_bundle()
        snap = take_snapshot(bundle)
        x = Tensor(np.random.default_rng(7).standard_normal((4, 6)))
        feats = forward_encoder(bundle, x, train=True)
        target = forward_snapshot(snap, x)
        assert not target.requires_grad
        loss = ad.sum_((feats - target) ** 2)
        backward(loss)
        for p in snap.encoder.parameters():
            assert p.grad is None
        assert bundle.encoder.layers[0].W.grad is not None

    def test_temporal_reset_is_seeded_per_task(self):
        b1 = small_bundle(temporal=True, seed=9)
        b2 = small_bundle(temporal=True, seed=9)
        reset_temporal(b1, 9, task_index=2)
        reset_temporal(b2, 9, task_index=2)
        assert params_hash(b1.temporal.named_parameters()) == \
            params_hash(b2.temporal.named_parameters())
        reset_temporal(b2, 9, task_index=3)
        assert params_hash(b1.temporal.named_parameters()) != \
            params_hash(b2.temporal.named_parameters())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        bundle = small_bundle(temporal=True, predictor=True)
        # advance running stats so buffers are non-trivial
        x = Tensor(np.random.default_rng(8).standard_normal((8, 6)))
        forward_projector(bundle, forward_encoder(bundle, x, train=True), train=True)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, bundle, extra_meta={"session": 3},
                        extra_blocks={"fisher.encoder.lin0.W":
                                      np.ones_like(bundle.encoder.layers[0].W.data)})
        loaded, meta, extras = load_checkpoint(path)
        assert meta["session"] == 3
        assert params_hash(loaded.named_parameters()) == \
            params_hash(bundle.named_parameters())
        for name, buf in bundle.named_buffers().items():
            assert np.array_equal(loaded.named_buffers()[name], buf)
        assert np.array_equal(extras["fisher.encoder.lin0.W"],
                              np.ones_like(bundle.encoder.layers[0].W.data))

    def test_same_outputs_after_reload(self, tmp_path):
        bundle = small_bundle()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, bundle)
        loaded, _, _ = load_checkpoint(path)
        x = Tensor(np.random.default_rng(9).standard_normal((5, 6)))
        a = forward_encoder(bundle, x).data
        b = forward_encoder(loaded, x).data
        assert np.array_equal(a, b)
