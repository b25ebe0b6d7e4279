"""Network construction, shape contracts, freezing, and gradients."""

import numpy as np
import pytest

from dasr import tensor as T
from dasr.models import (DiscSpre, DiscTrans, FeatureExtractor, Generator,
                         GeneratorConfig, desk_generator_config,
                         paper_scale_generator_config)
from dasr.optim import AdamState, adam_step
from dasr.tensor import Tensor

# pinned so a refactor cannot silently change the architecture
DESK_GENERATOR_PARAMS = 766_849


def tiny_config(scale=2, residual_scale=0.2):
    return GeneratorConfig(n_blocks=1, base_channels=4, growth_channels=3,
                           scale=scale, residual_scale=residual_scale)


class TestGenerator:
    def test_fresh_generator_is_exactly_the_bicubic_upscale(self):
        # the output conv is zero-initialized, so the learned path
        # contributes exactly nothing and the skip alone remains
        from dasr.imaging import Image, bicubic_resize
        gen = Generator(desk_generator_config(2), seed=1)
        rng = np.random.default_rng(0)
        lr = rng.random((1, 1, 8, 8)).astype(np.float32)
        out = gen(Tensor(lr))
        want = bicubic_resize(Image(lr[0, 0].astype(np.float64)[:, :, None]),
                              16, 16).array[:, :, 0].astype(np.float32)
        assert np.array_equal(out.data[0, 0], want)

    def test_learned_path_of_fresh_generator_is_zero(self):
        gen = Generator(desk_generator_config(2), seed=1)
        rng = np.random.default_rng(3)
        lr = Tensor(rng.random((1, 1, 8, 8)))
        out = gen(lr)
        assert np.array_equal(out.data, gen._bicubic_skip(lr).data)

    def test_shape_contract_x4(self):
        gen = Generator(tiny_config(scale=4), seed=2)
        out = gen(Tensor(np.random.default_rng(1).random((1, 1, 16, 16))))
        assert out.shape == (1, 1, 64, 64)

    @pytest.mark.parametrize("scale", [2, 4])
    @pytest.mark.parametrize("hw", [(8, 8), (9, 13), (16, 12)])
    def test_output_extents_scale_input(self, scale, hw):
        gen = Generator(tiny_config(scale=scale), seed=3)
        h, w = hw
        out = gen(Tensor(np.random.default_rng(2).random((1, 1, h, w))))
        assert out.shape == (1, 1, scale * h, scale * w)

    def test_wrong_channel_count_rejected(self):
        gen = Generator(tiny_config(), seed=4)
        with pytest.raises(ValueError, match=r"\[N,1,h,w\]"):
            gen(Tensor(np.zeros((1, 3, 8, 8))))

    def test_one_adam_step_decreases_mae(self):
        # descent on a fixed batch, across 5 seeds
        wins = 0
        for seed in range(5):
            gen = Generator(tiny_config(), seed=seed)
            rng = np.random.default_rng(100 + seed)
            lr = Tensor(rng.random((2, 1, 8, 8)))
            hr = Tensor(rng.random((2, 1, 16, 16)))
            state = AdamState()
            before = T.reduce_mean_abs_diff(gen(lr), hr)
            T.backward(before)
            adam_step(gen.parameters(), state, lr=1e-3)
            after = T.reduce_mean_abs_diff(gen(lr), hr)
            if after.item() < before.item():
                wins += 1
        assert wins == 5

    def test_param_count_regression_guard(self):
        gen = Generator(desk_generator_config(2), seed=5)
        assert gen.param_count() == DESK_GENERATOR_PARAMS
        again = Generator(desk_generator_config(2), seed=99)
        assert again.param_count() == DESK_GENERATOR_PARAMS

    def test_paper_scale_preset_has_23_blocks(self):
        cfg = paper_scale_generator_config(2)
        assert cfg.n_blocks == 23
        assert cfg.base_channels == 64


class TestRRDB:
    def _generator_with_block(self, residual_scale=0.2, seed=6):
        gen = Generator(tiny_config(residual_scale=residual_scale), seed=seed)
        return gen, gen.blocks[0]

    def test_zero_weights_give_identity(self):
        gen, block = self._generator_with_block()
        for name, p in gen._params.items():
            if name.startswith("rrdb0"):
                p.data = np.zeros_like(p.data)
        x = Tensor(np.random.default_rng(3).random((1, 4, 5, 5)))
        assert np.allclose(block(x).data, x.data)

    def test_residual_scale_zero_ignores_weights(self):
        gen, block = self._generator_with_block(residual_scale=0.0)
        x = Tensor(np.random.default_rng(4).random((1, 4, 5, 5)))
        out1 = block(x).data.copy()
        rng = np.random.default_rng(5)
        for name, p in gen._params.items():
            if name.startswith("rrdb0"):
                p.data = rng.standard_normal(p.shape).astype(np.float32)
        out2 = block(x).data
        assert np.array_equal(out1, x.data)
        assert np.array_equal(out2, x.data)

    def test_gradient_through_block(self):
        gen, block = self._generator_with_block(seed=7)
        x = Tensor(np.random.default_rng(6).random((1, 4, 5, 5)) * 2 - 1,
                   requires_grad=True)
        # eps small enough that the central difference does not straddle
        # leaky-relu kinks inside the block
        err = T.grad_check(lambda t: T.mean(block(t)), x, eps=1e-4)
        assert err < 1e-3

    def test_channel_mismatch(self):
        _, block = self._generator_with_block()
        with pytest.raises(ValueError, match="channels"):
            block(Tensor(np.zeros((1, 5, 5, 5))))


class TestDiscSpre:
    def test_logit_shape(self):
        d = DiscSpre(in_hw=32, seed=8)
        out = d(Tensor(np.random.default_rng(7).random((3, 1, 32, 32))))
        assert out.shape == (3, 1)

    def test_resolution_mismatch_names_build_size(self):
        d = DiscSpre(in_hw=32, seed=9)
        with pytest.raises(ValueError, match="32x32"):
            d(Tensor(np.zeros((1, 1, 48, 48))))


class TestDiscTrans:
    def test_constant_input_gives_zero_prior_latent(self):
        d = DiscTrans(in_hw=32, seed=10)
        logit, v_p = d(Tensor(np.full((2, 1, 32, 32), 0.37)))
        assert np.abs(v_p.data).max() < 1e-6
        # main branch of a constant image is not edge-free, but the logit
        # must still be a [N,1] scalar per item
        assert logit.shape == (2, 1)

    def test_prior_latent_zero_means_logit_is_head_bias_plus_main(self):
        # with the prior latent exactly zero the head sees only v_g
        d = DiscTrans(in_hw=32, seed=11)
        _, v_p = d(Tensor(np.full((1, 1, 32, 32), 0.5)))
        assert np.abs(v_p.data).max() < 1e-6

    def test_logit_gradient_wrt_input(self):
        d = DiscTrans(in_hw=32, seed=12)
        x = Tensor(np.random.default_rng(8).random((1, 1, 32, 32)),
                   requires_grad=True)
        # four conv stages of leaky-relu kinks: the difference step must be
        # well below the kink spacing (numeric converges to the analytic
        # value as eps shrinks)
        err = T.grad_check(lambda t: T.mean(d(t)[0]), x, eps=1e-5)
        assert err < 1e-3

    def test_sobel_weights_survive_training_steps(self):
        d = DiscTrans(in_hw=32, seed=13)
        frozen_before = d.frozen_hash()
        rng = np.random.default_rng(9)
        state = AdamState()
        for _ in range(3):
            logit, _ = d(Tensor(rng.random((2, 1, 32, 32))))
            T.backward(T.mean(logit))
            adam_step(d.parameters(), state, lr=1e-3)
        assert d.frozen_hash() == frozen_before

    def test_too_small_input_for_prior_blocks(self):
        with pytest.raises(ValueError, match="too small"):
            DiscTrans(in_hw=16, seed=14)

    def test_prior_block_count_configurable(self):
        d1 = DiscTrans(in_hw=64, seed=15, prior_blocks=1)
        d3 = DiscTrans(in_hw=64, seed=15, prior_blocks=3)
        x = Tensor(np.random.default_rng(10).random((1, 1, 64, 64)))
        _, vp1 = d1(x)
        _, vp3 = d3(x)
        assert vp1.shape != vp3.shape


class TestFeatureExtractor:
    def test_deterministic_and_independent_of_run_seed(self):
        a = FeatureExtractor()
        b = FeatureExtractor()
        assert a.frozen_hash() == b.frozen_hash()
        x = Tensor(np.random.default_rng(11).random((1, 1, 24, 24)))
        fa = a(x)
        fb = b(x)
        for ta, tb in zip(fa, fb):
            assert np.array_equal(ta.data, tb.data)

    def test_k_is_three_with_decreasing_resolution(self):
        fe = FeatureExtractor()
        feats = fe(Tensor(np.random.default_rng(12).random((1, 1, 32, 32))))
        assert len(feats) == fe.K == 3
        sizes = [f.shape[2] for f in feats]
        assert sizes == sorted(sizes, reverse=True)

    def test_distinct_inputs_yield_positive_feature_distance(self):
        fe = FeatureExtractor()
        rng = np.random.default_rng(13)
        x = rng.random((1, 1, 24, 24))
        noisy = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
        fx = fe(Tensor(x))
        fn = fe(Tensor(noisy))
        dist = np.mean([np.abs(a.data - b.data).mean()
                        for a, b in zip(fx, fn)])
        assert dist > 0.0

    def test_no_trainable_parameters(self):
        fe = FeatureExtractor()
        assert fe.parameters() == []

    def test_tap_weights(self):
        assert FeatureExtractor("shallow").tap_weights() == [1.0, 0.0, 0.0]
        assert FeatureExtractor("middle").tap_weights() == [0.0, 1.0, 0.0]
        assert FeatureExtractor("deep").tap_weights() == [0.0, 0.0, 1.0]
        assert sum(FeatureExtractor().stage_weights) == pytest.approx(1.0)
        with pytest.raises(ValueError, match="tap_depth"):
            FeatureExtractor("bottom")


class TestNamedTensors:
    def test_sorted_unique_enumeration(self):
        gen = Generator(tiny_config(), seed=16)
        names = [n for n, _ in gen.named_tensors()]
        assert names == sorted(names)
        assert len(names) == len(set(names))

    def test_load_rejects_missing_and_misshaped(self):
        gen = Generator(tiny_config(), seed=17)
        tensors = dict(gen.named_tensors())
        first = next(iter(tensors))
        broken = dict(tensors)
        del broken[first]
        with pytest.raises(ValueError, match="missing"):
            gen.load_named_tensors(broken)
        broken = dict(tensors)
        broken[first] = np.zeros((1, 2, 3))
        with pytest.raises(ValueError, match="shape"):
            gen.load_named_tensors(broken)
