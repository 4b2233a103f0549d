"""Multi-horizon transformer: mask construction and batching equivalence."""

import numpy as np
import pytest

from horizonmix import tensor as T
from horizonmix import transformer as tr
from horizonmix.encoder import encode, init_encoder_params
from horizonmix.errors import ConfigError
from horizonmix.mixture import build_horizon_set
from horizonmix.rng import make_rng

CFG = tr.TransformerConfig(layers=2, heads=2, d_model=32, d_ff=64, max_horizon=30)


def make_model(cfg=CFG, d_a=2, seed=0):
    return tr.init_transformer_params(seed, cfg, d_a, dtype=np.float64)


def make_ctx(b=3, c=4, d_model=32, seed=1):
    rng = make_rng(seed, "ctx")
    return T.constant(rng.standard_normal((b, c, d_model)))


def truncated_forward(params, cfg, ctx, chunk, tau, h):
    """Unpadded single-stream reference: sequence ends at horizon h."""
    masks, _ = tr.build_stream_masks([h], ctx.shape[1], h, with_time=True,
                                     dtype=ctx.data.dtype)
    tokens = T.add(
        T.linear(T.constant(chunk[:, None, :h, :]), params["action_lift.w"],
                 params["action_lift.b"]),
        params["action_pos"][:h],
    )
    feats = T.constant(tr.sinusoidal_features(tau, cfg.d_model))
    time_token = T.linear(feats, params["time_lift.w"], params["time_lift.b"])
    return tr._run(params, cfg, ctx, tokens, time_token, masks)


class TestMasks:
    def test_shapes_and_validity(self):
        masks, valid = tr.build_stream_masks([3, 6], n_context=4, max_horizon=6,
                                             with_time=True)
        assert masks.shape == (2, 1, 11, 11)
        np.testing.assert_array_equal(valid, [[1, 1, 1, 0, 0, 0], [1, 1, 1, 1, 1, 1]])

    def test_context_rows_see_context_only(self):
        masks, _ = tr.build_stream_masks([2, 4], n_context=3, max_horizon=4,
                                         with_time=True)
        for s in range(2):
            ctx_rows = masks[s, 0, :3]
            assert (ctx_rows[:, :3] == 0).all()
            assert (ctx_rows[:, 3:] == T.NEG_INF).all()

    def test_invalid_rows_self_only(self):
        masks, _ = tr.build_stream_masks([2, 4], n_context=3, max_horizon=4,
                                         with_time=False)
        row = masks[0, 0, 3 + 3]  # step 4 of the h=2 stream
        expect = np.full(7, T.NEG_INF)
        expect[6] = 0.0
        np.testing.assert_array_equal(row, expect)

    def test_valid_position_sets_nest_across_horizons(self):
        hs = build_horizon_set(30, 3)
        _, valid = tr.build_stream_masks(hs.horizons, 4, 30, with_time=True)
        for i in range(len(hs) - 1):
            assert set(np.flatnonzero(valid[i])) < set(np.flatnonzero(valid[i + 1]))

    def test_horizon_beyond_max_rejected(self):
        with pytest.raises(ConfigError):
            tr.build_stream_masks([3, 31], 4, 30, with_time=True)


class TestMaskEquivalence:
    def test_padded_matches_truncated_64bit(self):
        params = make_model()
        hs = build_horizon_set(30, 3)
        rng = make_rng(2, "mask-equiv")
        for trial in range(5):
            ctx = T.constant(rng.standard_normal((2, 4, 32)))
            chunk = rng.standard_normal((2, 30, 2))
            tau = rng.random(2)
            chunks = T.constant(np.broadcast_to(chunk[:, None], (2, len(hs), 30, 2)).copy())
            hidden, valid = tr.forward_multi_horizon(params, CFG, ctx, chunks, tau,
                                                     hs.horizons)
            for i, h in enumerate(hs.horizons):
                ref = truncated_forward(params, CFG, ctx, chunk, tau, h)
                np.testing.assert_allclose(hidden.data[:, i, :h], ref.data[:, 0],
                                           atol=1e-12, rtol=0)

    def test_padding_content_is_irrelevant(self):
        cfg = tr.TransformerConfig(layers=2, heads=2, d_model=32, d_ff=64, max_horizon=12)
        params = make_model(cfg)
        hs = build_horizon_set(12, 4)
        rng = make_rng(3, "padding")
        ctx = T.constant(rng.standard_normal((2, 4, 32)))
        base = np.broadcast_to(rng.standard_normal((2, 1, 12, 2)), (2, 3, 12, 2)).copy()
        noisy = base.copy()
        _, valid = tr.build_stream_masks(hs.horizons, 4, 12, with_time=True)
        noisy[:, ~valid] = 1e3 * rng.standard_normal(noisy[:, ~valid].shape)
        tau = rng.random(2)
        out_a, _ = tr.forward_multi_horizon(params, cfg, ctx, T.constant(base), tau, hs.horizons)
        out_b, _ = tr.forward_multi_horizon(params, cfg, ctx, T.constant(noisy), tau, hs.horizons)
        np.testing.assert_array_equal(out_a.data[:, valid], out_b.data[:, valid])

    def test_single_horizon_set_is_plain_forward(self):
        params = make_model()
        rng = make_rng(4, "single")
        ctx = T.constant(rng.standard_normal((2, 4, 32)))
        chunk = rng.standard_normal((2, 30, 2))
        tau = rng.random(2)
        hidden, valid = tr.forward_multi_horizon(params, CFG, ctx,
                                                 T.constant(chunk[:, None]), tau, [30])
        assert valid.all()
        ref = truncated_forward(params, CFG, ctx, chunk, tau, 30)
        np.testing.assert_allclose(hidden.data[:, 0], ref.data[:, 0], atol=1e-12, rtol=0)


class TestRegressionQueries:
    def test_mask_equivalence(self):
        cfg = tr.TransformerConfig(layers=2, heads=2, d_model=32, d_ff=64, max_horizon=12)
        params = make_model(cfg)
        hs = build_horizon_set(12, 4)
        ctx = make_ctx(2, 4, 32, seed=5)
        hidden, _ = tr.forward_regression_queries(params, cfg, ctx, hs.horizons)
        for i, h in enumerate(hs.horizons):
            masks, _ = tr.build_stream_masks([h], 4, h, with_time=False)
            tokens = T.add(
                T.broadcast_to(T.reshape(params["query"], (1, 1, 1, 32)), (2, 1, h, 32)),
                params["action_pos"][:h],
            )
            ref = tr._run(params, cfg, ctx, tokens, None, masks)
            np.testing.assert_allclose(hidden.data[:, i, :h], ref.data[:, 0],
                                       atol=1e-12, rtol=0)

    def test_zero_positional_embeddings_collapse_positions(self):
        cfg = tr.TransformerConfig(layers=2, heads=2, d_model=32, d_ff=64, max_horizon=6)
        params = make_model(cfg)
        params["action_pos"].data[:] = 0.0
        ctx = make_ctx(1, 4, 32, seed=6)
        hidden, _ = tr.forward_regression_queries(params, cfg, ctx, [6])
        first = hidden.data[:, 0, 0]
        for k in range(1, 6):
            np.testing.assert_allclose(hidden.data[:, 0, k], first, atol=1e-12)

    def test_deterministic(self):
        params = make_model()
        ctx = make_ctx(2, 4, 32, seed=7)
        a, _ = tr.forward_regression_queries(params, CFG, ctx, [10, 20, 30])
        b, _ = tr.forward_regression_queries(params, CFG, ctx, [10, 20, 30])
        np.testing.assert_array_equal(a.data, b.data)


class TestNonCausality:
    def test_swapping_positions_swaps_outputs(self):
        cfg = tr.TransformerConfig(layers=2, heads=2, d_model=32, d_ff=64, max_horizon=8)
        params = make_model(cfg)
        ctx = make_ctx(1, 4, 32, seed=8)
        rng = make_rng(9, "perm")
        chunk = rng.standard_normal((1, 1, 8, 2))
        tau = np.array([0.3])
        out_a, _ = tr.forward_multi_horizon(params, cfg, ctx, T.constant(chunk), tau, [8])

        swapped = chunk.copy()
        swapped[:, :, [2, 5]] = swapped[:, :, [5, 2]]
        pos = params["action_pos"].data
        pos[[2, 5]] = pos[[5, 2]]
        out_b, _ = tr.forward_multi_horizon(params, cfg, ctx, T.constant(swapped), tau, [8])
        pos[[2, 5]] = pos[[5, 2]]  # restore

        np.testing.assert_allclose(out_b.data[0, 0, [5, 2]], out_a.data[0, 0, [2, 5]],
                                   atol=1e-10)


class TestEncoder:
    def test_zero_weights_leave_positional_embeddings(self):
        params = init_encoder_params(0, obs_dim=5, n_tasks=3, n_tokens=4, d_model=8,
                                     hidden=16, dtype=np.float64)
        for name in ("encoder.w1", "encoder.w2", "encoder.task"):
            params[name].data[:] = 0.0
        out = encode(params, np.zeros((2, 5)), np.array([0, 2]), 4, 8)
        np.testing.assert_allclose(out.data, np.broadcast_to(params["encoder.pos"].data, (2, 4, 8)),
                                   atol=1e-15)

    def test_identical_observations_identical_contexts(self):
        params = init_encoder_params(1, 5, 3, 4, 8, 16, dtype=np.float64)
        obs = make_rng(10, "obs").standard_normal((1, 5))
        a = encode(params, obs, np.array([1]), 4, 8)
        b = encode(params, obs, np.array([1]), 4, 8)
        np.testing.assert_array_equal(a.data, b.data)

    def test_nondegenerate_jacobian(self):
        params = init_encoder_params(2, 5, 3, 4, 8, 16, dtype=np.float64)
        obs = make_rng(11, "obs2").standard_normal((1, 5))
        base = encode(params, obs, np.array([0]), 4, 8).data
        for j in range(5):
            bumped = obs.copy()
            bumped[0, j] += 1e-3
            out = encode(params, bumped, np.array([0]), 4, 8).data
            assert np.abs(out - base).max() > 0

    def test_dimension_mismatch_rejected(self):
        params = init_encoder_params(3, 5, 3, 4, 8, 16)
        with pytest.raises(ConfigError):
            encode(params, np.zeros((2, 7)), np.array([0, 0]), 4, 8)

    def test_unknown_task_rejected(self):
        params = init_encoder_params(4, 5, 3, 4, 8, 16)
        with pytest.raises(ConfigError):
            encode(params, np.zeros((1, 5)), np.array([3]), 4, 8)
