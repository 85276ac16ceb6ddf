"""Attention tests: band semantics, chunked-vs-oracle equivalence, memory growth."""

import numpy as np
import pytest

from lfab import attention, tensor
from lfab.attention import AttentionConfig, init_attention_weights
from lfab.errors import ConfigError
from lfab.tensor import Tensor


def make(num_heads=4, head_dim=16, left=128, right=128, gt=False, seed=0):
    cfg = AttentionConfig(num_heads, head_dim, left, right, use_global_token=gt)
    w = init_attention_weights(cfg, np.random.default_rng(seed))
    return cfg, w


def rand_x(t, d, seed=1):
    return Tensor(np.random.default_rng(seed).standard_normal((t, d)).astype(np.float32))


class TestConfig:
    def test_model_dim(self):
        assert AttentionConfig(4, 16).model_dim == 64

    @pytest.mark.parametrize("kwargs", [
        dict(num_heads=0, head_dim=8),
        dict(num_heads=2, head_dim=0),
        dict(num_heads=2, head_dim=8, left_context=-1),
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            AttentionConfig(**kwargs)

    def test_chunk_size_is_padded_span(self):
        assert attention.chunk_size(AttentionConfig(1, 8, 128, 128)) == 264
        assert attention.chunk_size(AttentionConfig(1, 8, 3, 4)) == 8
        assert attention.chunk_size(AttentionConfig(1, 8, 0, 0)) == 8

    def test_weights_gt_presence_enforced(self):
        cfg, w = make(gt=False)
        cfg_gt, w_gt = make(gt=True)
        with pytest.raises(ConfigError):
            attention.validate_weights(cfg, w_gt)
        with pytest.raises(ConfigError):
            attention.validate_weights(cfg_gt, w)


class TestMasks:
    def test_band_mask_geometry(self):
        m = attention.band_mask(5, 1, 2)
        # row 2 may see columns 1..4
        np.testing.assert_array_equal(m[2], [False, True, True, True, True])
        assert m.diagonal().all()

    def test_band_mask_window_zero_is_identity(self):
        np.testing.assert_array_equal(attention.band_mask(4, 0, 0), np.eye(4, dtype=bool))

    def test_global_token_row_and_column_fully_open(self):
        m = attention.global_token_mask(6, 1, 1)
        assert m[0].all() and m[:, 0].all()
        np.testing.assert_array_equal(m[1:, 1:], attention.band_mask(6, 1, 1))


class TestFullAttention:
    def test_t1_reduces_to_value_then_output_projection(self):
        cfg, w = make()
        x = rand_x(1, cfg.model_dim)
        got = attention.mha_full(x, w, cfg)
        want = tensor.linear_rows(tensor.linear_rows(x, w.w_v, w.b_v), w.w_o, w.b_o)
        np.testing.assert_array_equal(got.array, want.array)

    def test_deterministic_repeat(self):
        cfg, w = make()
        x = rand_x(33, cfg.model_dim)
        a = attention.mha_full(x, w, cfg)
        b = attention.mha_full(x, w, cfg)
        np.testing.assert_array_equal(a.array, b.array)

    def test_output_shape(self):
        cfg, w = make()
        assert attention.mha_full(rand_x(17, 64), w, cfg).shape == (17, 64)


class TestMaskedOracle:
    def test_window_zero_attends_only_self(self):
        cfg, w = make(left=0, right=0)
        x = rand_x(7, cfg.model_dim)
        got = attention.lca_masked_oracle(x, w, cfg)
        want = tensor.linear_rows(tensor.linear_rows(x, w.w_v, w.b_v), w.w_o, w.b_o)
        np.testing.assert_allclose(got.array, want.array, atol=2e-6)

    def test_full_window_is_bitwise_mha(self):
        cfg, w = make(left=63, right=63)
        x = rand_x(64, cfg.model_dim)
        a = attention.lca_masked_oracle(x, w, cfg)
        b = attention.mha_full(x, w, cfg)
        np.testing.assert_array_equal(a.array, b.array)

    def test_band_actually_limits_context(self):
        # changing a key outside every query's band must not change outputs
        cfg, w = make(left=2, right=2)
        x = rand_x(32, cfg.model_dim).array.copy()
        base = attention.lca_masked_oracle(Tensor(x), w, cfg).array[:8]
        x2 = x.copy()
        x2[20:] += 5.0  # far outside the band of rows 0..7
        pert = attention.lca_masked_oracle(Tensor(x2), w, cfg).array[:8]
        np.testing.assert_array_equal(base, pert)


class TestChunked:
    def test_single_chunk_exact(self):
        cfg, w = make(left=16, right=16)
        x = rand_x(31, cfg.model_dim)  # 31 < chunk size 40
        a = attention.lca_chunked(x, w, cfg)
        b = attention.lca_masked_oracle(x, w, cfg)
        np.testing.assert_array_equal(a.array, b.array)

    @pytest.mark.parametrize("t,left,right", [
        (100, 4, 4), (257, 16, 16), (300, 0, 8), (511, 8, 0), (1024, 32, 32),
        (97, 1, 1), (640, 128, 128),
    ])
    def test_matches_oracle(self, t, left, right):
        cfg, w = make(left=left, right=right, seed=left * 100 + right)
        x = rand_x(t, cfg.model_dim, seed=t)
        a = attention.lca_chunked(x, w, cfg).array
        b = attention.lca_masked_oracle(x, w, cfg).array
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)

    def test_never_materializes_dense_scores(self):
        cfg, w = make(num_heads=2, head_dim=8, left=8, right=8)
        x = rand_x(4096, cfg.model_dim)
        attention.lca_chunked(x, w, cfg)  # warm-up outside the tracker
        with tensor.AllocationTracker() as tr:
            attention.lca_chunked(x, w, cfg)
        dense = 2 * 4096 * 4096 * 4
        assert tr.peak_bytes < dense // 20

    def test_score_memory_grows_linearly(self):
        cfg, w = make(left=16, right=16)
        peaks = {}
        for t in (1040, 2080):  # multiples of the 40-wide chunk
            x = rand_x(t, cfg.model_dim)
            attention.lca_chunked(x, w, cfg)
            with tensor.AllocationTracker() as tr:
                attention.lca_chunked(x, w, cfg)
            peaks[t] = tr.peak_bytes
        ratio = peaks[2080] / peaks[1040]
        assert 1.8 <= ratio <= 2.2, ratio


class TestOracleMemory:
    def test_score_memory_grows_quadratically(self):
        cfg, w = make(left=8, right=8)
        peaks = {}
        for t in (512, 1024):
            x = rand_x(t, cfg.model_dim)
            attention.lca_masked_oracle(x, w, cfg)
            with tensor.AllocationTracker() as tr:
                attention.lca_masked_oracle(x, w, cfg)
            peaks[t] = tr.peak_bytes
        ratio = peaks[1024] / peaks[512]
        assert 3.5 <= ratio <= 4.5, ratio


class TestGlobalToken:
    def test_requires_embedding(self):
        cfg, w = make(gt=True)
        w.global_token = None
        with pytest.raises(ConfigError):
            attention.lca_global_token(rand_x(8, cfg.model_dim), w, cfg)

    def test_full_window_equals_augmented_mha(self):
        cfg, w = make(left=63, right=63, gt=True)
        x = rand_x(40, cfg.model_dim)
        got = attention.lca_global_token(x, w, cfg)
        x_aug = Tensor(np.concatenate([w.global_token.array, x.array], axis=0))
        want = attention.mha_full(x_aug, w, cfg).array[1:]
        assert got.shape == (40, cfg.model_dim)
        np.testing.assert_allclose(got.array, want, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("t,left,right", [(300, 8, 8), (777, 16, 4), (128, 2, 2)])
    def test_matches_augmented_masked_oracle(self, t, left, right):
        cfg, w = make(left=left, right=right, gt=True, seed=7)
        x = rand_x(t, cfg.model_dim, seed=t + 1)
        got = attention.lca_global_token(x, w, cfg)
        x_aug = Tensor._wrap(np.concatenate([w.global_token.array, x.array], axis=0))
        mask = attention.global_token_mask(t, left, right)
        want = attention.attend_with_mask(x_aug, w, cfg, mask).array[1:]
        np.testing.assert_allclose(got.array, want, rtol=1e-5, atol=1e-6)

    def test_global_token_opens_an_information_path(self):
        # same weights with and without the GT column: outputs must differ
        cfg_gt, w_gt = make(left=2, right=2, gt=True, seed=3)
        cfg, _ = make(left=2, right=2, gt=False, seed=3)
        w_plain = attention.AttentionWeights(
            w_q=w_gt.w_q, w_k=w_gt.w_k, w_v=w_gt.w_v, w_o=w_gt.w_o,
            b_q=w_gt.b_q, b_k=w_gt.b_k, b_v=w_gt.b_v, b_o=w_gt.b_o,
        )
        x = rand_x(64, cfg.model_dim, seed=9)
        with_gt = attention.lca_global_token(x, w_gt, cfg_gt).array
        without = attention.lca_chunked(x, w_plain, cfg).array
        assert np.abs(with_gt - without).max() > 1e-4
