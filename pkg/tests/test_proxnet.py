"""Denoiser network tests: identity init, attention invariants, gradients."""

import numpy as np
import pytest

import cassikit.autodiff as ad
from cassikit.autodiff import ParamStore, Tensor, check_params, no_grad
from cassikit.denoiser import (
    ProxConfig,
    attention_block,
    build_prox_params,
    prox_forward,
    spatial_lowrank_attention,
    spectral_attention,
    window_merge,
    window_partition,
)

MICRO = ProxConfig(bands=4, levels=2, base_channels=8, window=4, n_stages=2)


def micro_store(cfg=MICRO, seed=0, dtype=np.float64):
    store = ParamStore(rng=np.random.default_rng(seed), dtype=dtype)
    build_prox_params(store, "prox.", cfg)
    return store


def attn_params(rng, c, dq):
    def lin(cin, cout):
        return (Tensor(rng.standard_normal((cin, cout)) / np.sqrt(cin)),
                Tensor(np.zeros(cout)))

    wq, bq = lin(c, dq)
    wk, bk = lin(c, dq)
    wv, bv = lin(c, c)
    wo, bo = lin(c, c)
    return wq, bq, wk, bk, wv, bv, wo, bo


def test_identity_at_initialization():
    # zero out_head plus the outer skip: D(x) == x exactly for fresh params
    store = micro_store()
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 4, 8, 8)))
    out = prox_forward(x, 0, store, "prox.", MICRO)
    np.testing.assert_array_equal(out.data, x.data)


def test_zero_output_at_init_without_outer_skip():
    cfg = ProxConfig(bands=4, levels=2, base_channels=8, window=4,
                     use_outer_skip=False)
    store = ParamStore(rng=np.random.default_rng(0), dtype=np.float64)
    build_prox_params(store, "p.", cfg)
    x = Tensor(np.random.default_rng(2).standard_normal((1, 4, 8, 8)))
    out = prox_forward(x, 0, store, "p.", cfg)
    np.testing.assert_array_equal(out.data, np.zeros_like(x.data))


def test_shape_preserved_under_internal_padding():
    # sizes that do not tile into windows go through reflect pad + crop
    store = micro_store()
    rng = np.random.default_rng(3)
    for H, W in ((8, 11), (9, 9), (10, 15)):
        x = Tensor(rng.standard_normal((1, 4, H, W)))
        out = prox_forward(x, 1, store, "prox.", MICRO)
        assert out.shape == (1, 4, H, W)


def test_window_partition_roundtrip_and_layout():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 8, 12))
    t = window_partition(Tensor(x), 4)
    assert t.shape == (2 * 2 * 3, 16, 3)
    # first window of the first image: tokens scan rows then columns
    np.testing.assert_array_equal(
        t.data[0].reshape(4, 4, 3), np.moveaxis(x[0, :, :4, :4], 0, -1)
    )
    back = window_merge(t, 2, 3, 8, 12, 4)
    np.testing.assert_array_equal(back.data, x)


def test_spectral_attention_rows_sum_to_one():
    rng = np.random.default_rng(5)
    tokens = Tensor(rng.standard_normal((3, 16, 6)))
    out, attn = spectral_attention(tokens, *attn_params(rng, 6, 6),
                                   return_attn=True)
    assert attn.shape == (3, 6, 6)  # channel-by-channel map
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)
    assert out.shape == tokens.shape


def test_spatial_attention_rows_sum_to_one_and_rank_dim():
    rng = np.random.default_rng(6)
    tokens = Tensor(rng.standard_normal((2, 16, 8)))
    out, attn = spatial_lowrank_attention(tokens, *attn_params(rng, 8, 3),
                                          return_attn=True)
    assert attn.shape == (2, 16, 16)  # token-by-token map via rank-3 q/k
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)
    assert out.shape == tokens.shape


def test_zero_queries_give_uniform_attention():
    rng = np.random.default_rng(7)
    tokens = Tensor(rng.standard_normal((2, 9, 5)))
    params = list(attn_params(rng, 5, 5))
    params[0] = Tensor(np.zeros((5, 5)))  # wq = 0 -> constant logits
    params[1] = Tensor(np.zeros(5))
    _, attn = spectral_attention(tokens, *params, return_attn=True)
    np.testing.assert_allclose(attn.data, 1.0 / 5.0, atol=1e-12)


def test_single_channel_spectral_attention():
    rng = np.random.default_rng(8)
    tokens = Tensor(rng.standard_normal((2, 4, 1)))
    out, attn = spectral_attention(tokens, *attn_params(rng, 1, 1),
                                   return_attn=True)
    np.testing.assert_allclose(attn.data, 1.0, atol=1e-12)  # softmax of one
    assert out.shape == tokens.shape


def test_constant_input_constant_attention_output():
    # constant tokens: every channel identical up to projection; attention
    # output stays constant across tokens
    rng = np.random.default_rng(9)
    tokens = Tensor(np.full((1, 8, 5), 0.7))
    out = spatial_lowrank_attention(tokens, *attn_params(rng, 5, 2))
    spread = out.data.max(axis=1) - out.data.min(axis=1)
    np.testing.assert_allclose(spread, 0.0, atol=1e-12)


def test_stage_bias_conditions_output():
    store = micro_store()
    # break the symmetry: identical weights, distinct stage bias rows
    store["prox.stage_bias"].data[:] = np.array([[0.0] * 8, [1.0] * 8])
    # non-zero head so the conditioned trunk reaches the output
    store["prox.out_head.w"].data[:] = np.random.default_rng(10).standard_normal((4, 8)) * 0.1
    x = Tensor(np.random.default_rng(11).standard_normal((1, 4, 8, 8)))
    y0 = prox_forward(x, 0, store, "prox.", MICRO)
    y1 = prox_forward(x, 1, store, "prox.", MICRO)
    assert np.max(np.abs(y0.data - y1.data)) > 1e-6


def test_use_attention_toggle_drops_parameters():
    cfg_on = MICRO
    cfg_off = ProxConfig(bands=4, levels=2, base_channels=8, window=4,
                         n_stages=2, use_attention=False)
    on = micro_store(cfg_on)
    off = micro_store(cfg_off)
    assert off.count() < on.count()
    assert not any("attn" in name for name, _ in off.items())
    x = Tensor(np.random.default_rng(12).standard_normal((1, 4, 8, 8)))
    out = prox_forward(x, 0, off, "prox.", cfg_off)
    np.testing.assert_array_equal(out.data, x.data)  # still identity at init


def test_schedule_validation():
    with pytest.raises(ValueError):
        ProxConfig(bands=4, levels=2, attention_schedule=("spectral",))
    with pytest.raises(ValueError):
        ProxConfig(bands=4, levels=1, attention_schedule=("fourier",))
    assert ProxConfig(bands=4, levels=3).schedule() == (
        "spectral", "spectral", "spatial")


def test_lowrank_dim_stays_below_channels():
    cfg = MICRO
    for c in (2, 4, 8, 16, 32, 64, 256):
        dq = cfg.lowrank_dim(c)
        assert 1 <= dq <= max(c // 2, 1)


def test_attention_block_gradients():
    rng = np.random.default_rng(13)
    store = ParamStore(rng=np.random.default_rng(14), dtype=np.float64)
    from cassikit.denoiser import _build_block

    cfg = ProxConfig(bands=4, levels=1, base_channels=6, window=3,
                     attention_schedule=("spatial",))
    _build_block(store, "blk.", 6, "spatial", cfg)
    x = Tensor(rng.standard_normal((1, 6, 6, 6)))
    cot = rng.standard_normal((1, 6, 6, 6))

    def loss_fn():
        out = attention_block(x, store, "blk.", "spatial", 3, 2)
        return ad.reduce_sum(ad.mul(out, Tensor(cot)))

    report = check_params(loss_fn, list(store.items()), max_coords=3, seed=0)
    assert report.max_error <= 1e-5, report.lines()


def test_micro_model_gradients():
    store = micro_store(seed=15)
    # move off the exact-identity point so out_head grads are generic
    rng = np.random.default_rng(16)
    for name, p in store.items():
        if "out_head" in name:
            p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.standard_normal((1, 4, 8, 8)))
    cot = rng.standard_normal((1, 4, 8, 8))

    def loss_fn():
        out = prox_forward(x, 1, store, "prox.", MICRO)
        return ad.reduce_sum(ad.mul(out, Tensor(cot)))

    report = check_params(loss_fn, list(store.items()), max_coords=2, seed=1)
    assert report.max_error <= 1e-4, report.lines()


def test_forward_under_no_grad_builds_no_graph():
    store = micro_store()
    x = Tensor(np.random.default_rng(17).standard_normal((1, 4, 8, 8)))
    with no_grad():
        out = prox_forward(x, 0, store, "prox.", MICRO)
    assert out._parents == () and not out.requires_grad
