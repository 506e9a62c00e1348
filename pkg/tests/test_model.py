import dataclasses

import numpy as np
import pytest

from boat.attention import init_attention_params
from boat.grouping import GroupingConfig
from boat.model import (BlockParams, ModelConfig, bla_block_forward,
                        boat_forward, cluster_levels_for, count_params,
                        estimate_flops, estimate_macs,
                        fsla_attention_matrix_macs, gelu,
                        global_attention_matrix_macs, init_model_params,
                        macs_breakdown, mlp_forward, parameter_specs,
                        parameter_tensors, patch_embed, stage_geometry,
                        stage_merge, tiny_config)
from boat.numeric import ShapeError
from boat.rng import Stream

SMALL = ModelConfig(height=32, width=32, channels=16, depths=(2, 1, 1, 1),
                    heads=(2, 2, 2, 2), window_size=4, mlp_ratio=2,
                    target_cluster_size=16, overlap=3, num_classes=5,
                    fsla_layout="all")


class TestGeometry:
    def test_tiny_stage_grids(self):
        geos = stage_geometry(tiny_config())
        assert [(g.height, g.width) for g in geos] == \
            [(56, 56), (28, 28), (14, 14), (7, 7)]
        assert [g.tokens for g in geos] == [3136, 784, 196, 49]
        assert [g.channels for g in geos] == [96, 192, 384, 768]

    def test_tiny_cluster_schedule(self):
        geos = stage_geometry(tiny_config())
        assert [g.levels for g in geos] == [6, 4, 2, 0]
        assert [g.tokens >> g.levels for g in geos] == [49, 49, 49, 49]
        assert [g.overlap for g in geos] == [20, 20, 20, 0]

    def test_levels_rule(self):
        assert cluster_levels_for(3136, 49) == 6
        assert cluster_levels_for(784, 49) == 4
        assert cluster_levels_for(196, 49) == 2
        assert cluster_levels_for(49, 49) == 0
        assert cluster_levels_for(256, 49) == 2   # 64 < 49 stops at 2
        assert cluster_levels_for(100, 10) == 2   # 25 odd stops division
        assert cluster_levels_for(7, 2) == 0

    def test_paired_layout(self):
        geos = stage_geometry(tiny_config())
        assert [list(g.fsla_blocks) for g in geos] == [
            [False, True], [False, True],
            [False, True, False, True, False, True], [False, False]]

    def test_non_square_input(self):
        cfg = dataclasses.replace(tiny_config(), height=192, width=256)
        geos = stage_geometry(cfg)
        assert (geos[0].height, geos[0].width) == (48, 64)
        assert geos[3].tokens == 6 * 8

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(depths=(2, 2, 2))
        with pytest.raises(ValueError):
            ModelConfig(heads=(5, 6, 12, 24))  # 96 % 5 != 0
        with pytest.raises(ValueError):
            ModelConfig(fsla_layout="alternating")
        with pytest.raises(ValueError):
            ModelConfig(window_size=0)


class TestParameters:
    def test_closed_form_matches_materialized(self):
        for cfg in (SMALL, tiny_config(),
                    dataclasses.replace(SMALL, fsla_layout="none"),
                    dataclasses.replace(SMALL, fsla_layout="paired")):
            params = init_model_params(cfg, seed=0)
            materialized = sum(a.size for _, a in parameter_tensors(cfg, params))
            assert count_params(cfg) == materialized

    def test_spec_walk_matches_closed_form(self):
        total = sum(int(np.prod(shape))
                    for _, shape, _ in parameter_specs(SMALL))
        assert total == count_params(SMALL)

    def test_tiny_parameter_budget(self):
        total = count_params(tiny_config())
        assert abs(total - 31_000_000) <= 3_100_000

    def test_fsla_delta_small_and_positive(self):
        cfg = tiny_config()
        delta = count_params(cfg) - count_params(
            dataclasses.replace(cfg, fsla_layout="none"))
        assert 0 < delta < 5_000_000

    def test_init_statistics(self):
        params = init_model_params(SMALL, seed=0)
        blk = params.stages[0].blocks[0]
        assert np.all(blk.isla.bq == 0) and np.all(blk.mlp_b1 == 0)
        assert np.all(blk.ln1_gamma == 1) and np.all(blk.ln1_beta == 0)
        w = params.stages[2].blocks[0].mlp_w1
        assert abs(float(w.std()) - 0.02) < 0.004
        assert float(np.abs(w).max()) <= 0.04 + 1e-6

    def test_init_deterministic_and_seed_sensitive(self):
        a = init_model_params(SMALL, seed=5)
        b = init_model_params(SMALL, seed=5)
        c = init_model_params(SMALL, seed=6)
        assert a.patch_weight.tobytes() == b.patch_weight.tobytes()
        assert a.patch_weight.tobytes() != c.patch_weight.tobytes()

    def test_default_dtype_f32(self):
        params = init_model_params(SMALL, seed=0)
        assert params.head_weight.dtype == np.float32

    def test_fsla_tensors_only_where_configured(self):
        cfg = dataclasses.replace(SMALL, fsla_layout="paired")
        params = init_model_params(cfg, seed=0)
        assert params.stages[0].blocks[0].fsla is None
        assert params.stages[0].blocks[1].fsla is not None
        assert params.stages[3].blocks[0].fsla is None


class TestForwardPieces:
    def test_patch_embed_grid(self):
        img = Stream(0).child("img").normal((3, 224, 224), dtype=np.float32)
        w = Stream(1).child("w").trunc_normal((8, 3, 7, 7), 0.02).astype(np.float32)
        b = np.zeros(8, dtype=np.float32)
        tokens, spatial = patch_embed(img, w, b)
        assert spatial == (56, 56)
        assert tokens.shape == (3136, 8)

    def test_patch_embed_rejects_bad_image(self):
        with pytest.raises(ShapeError):
            patch_embed(np.zeros((1, 8, 8), dtype=np.float32),
                        np.zeros((4, 3, 7, 7), dtype=np.float32),
                        np.zeros(4, dtype=np.float32))

    def test_stage_merge_halves_grid_doubles_channels(self):
        x = Stream(2).child("m").normal((64, 8), dtype=np.float32)
        w = Stream(3).child("mw").normal((16, 8, 3, 3), dtype=np.float32)
        b = np.zeros(16, dtype=np.float32)
        merged, spatial = stage_merge(x, (8, 8), w, b)
        assert spatial == (4, 4)
        assert merged.shape == (16, 16)

    def test_gelu_reference_points(self):
        assert gelu(np.array([0.0]))[0] == 0.0
        assert abs(gelu(np.array([1.0]))[0] - 0.8411919906082768) < 1e-12
        big = np.array([8.0, -8.0])
        assert np.allclose(gelu(big), [8.0, 0.0], atol=1e-9)

    def test_mlp_zero_weights_give_bias(self):
        x = Stream(4).child("mlp").normal((5, 4), dtype=np.float64)
        out = mlp_forward(x, np.zeros((4, 8)), np.zeros(8),
                          np.zeros((8, 4)), np.full(4, 2.5))
        assert np.allclose(out, 2.5, atol=0)


def _identity_block(channels, heads, window, dtype=np.float64):
    """Block whose attention and MLP contribute exactly zero."""
    s = Stream(31)
    isla = init_attention_params(channels, s.child("isla"), dtype=dtype,
                                 rpb_window=window, num_heads=heads)
    fsla = init_attention_params(channels, s.child("fsla"), dtype=dtype,
                                 lepe=True)
    isla.wo[:] = 0
    fsla.wo[:] = 0
    hidden = 2 * channels
    return BlockParams(
        ln1_gamma=np.ones(channels, dtype=dtype),
        ln1_beta=np.zeros(channels, dtype=dtype),
        isla=isla,
        ln3_gamma=np.ones(channels, dtype=dtype),
        ln3_beta=np.zeros(channels, dtype=dtype),
        mlp_w1=s.child("w1").normal((channels, hidden), dtype=dtype),
        mlp_b1=np.zeros(hidden, dtype=dtype),
        mlp_w2=np.zeros((hidden, channels), dtype=dtype),
        mlp_b2=np.zeros(channels, dtype=dtype),
        heads=heads, window=window,
        ln2_gamma=np.ones(channels, dtype=dtype),
        ln2_beta=np.zeros(channels, dtype=dtype),
        fsla=fsla,
        grouping=GroupingConfig(levels=1),
        cluster_on="input")


class TestBlockForward:
    def test_zero_out_projections_make_identity(self):
        block = _identity_block(channels=8, heads=2, window=3)
        for seed in range(3):
            x = Stream(40 + seed).child("x").normal((36, 8))
            for shift in (0, 1):
                out = bla_block_forward(x, block, (6, 6), shift)
                assert out.tobytes() == x.tobytes()

    def test_block_changes_input_generally(self):
        params = init_model_params(SMALL, seed=2)
        block = params.stages[0].blocks[0]
        x = Stream(41).child("x").normal((64, 16), dtype=np.float32)
        out = bla_block_forward(x, block, (8, 8), 0)
        assert out.shape == x.shape
        assert np.abs(out - x).max() > 1e-4


class TestFullForward:
    def test_stage_trace_and_logits(self):
        params = init_model_params(SMALL, seed=0)
        img = Stream(42).child("img").normal((3, 32, 32), dtype=np.float32)
        logits, trace = boat_forward(img, SMALL, params,
                                     return_stage_info=True)
        assert logits.shape == (5,)
        assert np.all(np.isfinite(logits))
        assert [t.tokens for t in trace] == [64, 16, 4, 1]
        assert [t.channels for t in trace] == [16, 32, 64, 128]

    def test_forward_deterministic(self):
        params = init_model_params(SMALL, seed=0)
        img = Stream(43).child("img").normal((3, 32, 32), dtype=np.float32)
        a = boat_forward(img, SMALL, params)
        b = boat_forward(img, SMALL, params)
        assert a.tobytes() == b.tobytes()

    def test_wrong_image_shape(self):
        params = init_model_params(SMALL, seed=0)
        with pytest.raises(ShapeError):
            boat_forward(np.zeros((3, 16, 16), dtype=np.float32), SMALL, params)


class TestCostModel:
    def test_fsla_term_is_global_term_over_2k(self):
        for k in (0, 2, 4, 6):
            fsla = fsla_attention_matrix_macs(3136, 96, k, 0)
            glob = global_attention_matrix_macs(3136, 96)
            assert fsla * (1 << k) == glob

    def test_overlap_increases_attention_cost(self):
        base = fsla_attention_matrix_macs(3136, 96, 6, 0)
        with_overlap = fsla_attention_matrix_macs(3136, 96, 6, 20)
        assert with_overlap > base

    def test_tiny_total_near_reference(self):
        macs = estimate_macs(tiny_config())
        assert abs(macs - 5_200_000_000) <= 0.15 * 5_200_000_000

    def test_flops_double_macs(self):
        assert estimate_flops(SMALL) == 2 * estimate_macs(SMALL)

    def test_breakdown_sums_and_is_positive(self):
        bd = macs_breakdown(tiny_config())
        assert sum(bd.values()) == estimate_macs(tiny_config())
        assert all(v > 0 for v in bd.values())
        assert "stage2.fsla_attn" in bd
        assert "stage3.fsla_proj" not in bd  # paired layout skips stage 3

    def test_none_layout_has_no_fsla_terms(self):
        bd = macs_breakdown(dataclasses.replace(tiny_config(),
                                                fsla_layout="none"))
        assert not any("fsla" in k for k in bd)
