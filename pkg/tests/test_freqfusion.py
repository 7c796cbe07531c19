"""Skip-fusion tests: kernel normalization, filter oracles, identity paths."""

import numpy as np

import cassikit.autodiff as ad
from cassikit.autodiff import ParamStore, Tensor
from cassikit.fusion import (
    build_fusion_params,
    dynamic_blur,
    fuse_skip,
    hpf_enhance,
    lpf_upsample,
    neighbor_cosine_maps,
    offset_resample,
    predict_kernels,
)


def fusion_store(c_enc=4, c_dec=8, seed=0, use_offset=False):
    store = ParamStore(rng=np.random.default_rng(seed), dtype=np.float64)
    build_fusion_params(store, "f.", c_enc, c_dec, use_offset=use_offset)
    return store


def test_predicted_kernels_are_normalized():
    rng = np.random.default_rng(1)
    feat = Tensor(rng.standard_normal((2, 4, 5, 5)))
    w = Tensor(rng.standard_normal((9, 4)))
    b = Tensor(rng.standard_normal(9))
    kern = predict_kernels(feat, w, b).data
    assert kern.shape == (2, 9, 5, 5)
    np.testing.assert_allclose(kern.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(kern >= 0)


def test_zero_head_gives_uniform_taps():
    feat = Tensor(np.random.default_rng(2).standard_normal((1, 3, 4, 4)))
    kern = predict_kernels(feat, Tensor(np.zeros((9, 3))), Tensor(np.zeros(9)))
    np.testing.assert_allclose(kern.data, 1.0 / 9.0, atol=1e-12)


def test_uniform_kernel_blur_is_box_filter():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 6, 7))
    kern = Tensor(np.full((1, 9, 6, 7), 1.0 / 9.0))
    out = dynamic_blur(Tensor(x), kern, 3).data
    ref = np.empty_like(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    for r in range(6):
        for c in range(7):
            ref[:, :, r, c] = xp[:, :, r:r + 3, c:c + 3].mean(axis=(2, 3))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_delta_kernel_blur_is_identity():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 5, 5))
    taps = np.zeros((2, 9, 5, 5))
    taps[:, 4] = 1.0  # center tap of the 3x3 stencil
    out = dynamic_blur(Tensor(x), Tensor(taps), 3).data
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_blur_preserves_constants():
    rng = np.random.default_rng(5)
    x = Tensor(np.full((1, 2, 6, 6), 2.5))
    logits = rng.standard_normal((1, 9, 6, 6))
    kern = ad.softmax(ad.transpose(Tensor(logits), (0, 2, 3, 1)))
    kern = ad.transpose(kern, (0, 3, 1, 2))
    out = dynamic_blur(x, kern, 3).data
    np.testing.assert_allclose(out, 2.5, atol=1e-6)


def test_lpf_upsample_constant_fixed_point():
    store = fusion_store()
    x = Tensor(np.full((1, 4, 4, 4), 1.25))
    out = lpf_upsample(x, store["f.lpf.w"], store["f.lpf.b"]).data
    assert out.shape == (1, 4, 8, 8)
    np.testing.assert_allclose(out, 1.25, atol=1e-6)


def test_hpf_enhances_step_edge():
    # sharpening: 2x - blur(x) overshoots on both sides of a step
    x = np.zeros((1, 1, 4, 8))
    x[..., 4:] = 1.0
    context = Tensor(np.zeros((1, 2, 4, 8)))
    out = hpf_enhance(Tensor(x), context, Tensor(np.zeros((9, 2))),
                      Tensor(np.zeros(9))).data
    assert out[0, 0, 1, 3] < 0.0  # dark side dips below zero
    assert out[0, 0, 1, 4] > 1.0  # bright side overshoots
    flat = out[0, 0, :, 0]
    np.testing.assert_allclose(flat, 0.0, atol=1e-12)  # far field untouched


def test_hpf_constant_fixed_point():
    x = Tensor(np.full((1, 3, 5, 5), -0.75))
    rng = np.random.default_rng(6)
    context = Tensor(rng.standard_normal((1, 6, 5, 5)))
    out = hpf_enhance(x, context, Tensor(rng.standard_normal((9, 6))),
                      Tensor(np.zeros(9))).data
    np.testing.assert_allclose(out, -0.75, atol=1e-6)


def test_disabled_fusion_is_bitwise_plain_path():
    store = fusion_store()
    rng = np.random.default_rng(7)
    f_enc = Tensor(rng.standard_normal((1, 4, 8, 8)))
    f_dec = Tensor(rng.standard_normal((1, 8, 4, 4)))
    got = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=False)
    aligned = ad.conv1x1(f_dec, store["f.align.w"], store["f.align.b"])
    plain = ad.add(f_enc, ad.upsample_bilinear2d(aligned))
    assert np.array_equal(got.data, plain.data)  # identical, not just close


def test_fused_path_at_zero_heads_matches_plain_path():
    # zero kernel heads mean uniform 3x3 blurs; on constant features both
    # arms collapse onto the plain path
    store = fusion_store()
    f_enc = Tensor(np.full((1, 4, 8, 8), 0.5))
    f_dec = Tensor(np.full((1, 8, 4, 4), -1.0))
    fused = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=True)
    plain = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=False)
    np.testing.assert_allclose(fused.data, plain.data, atol=1e-10)


def test_offset_arm_zero_head_is_identity():
    store = fusion_store(use_offset=True)
    rng = np.random.default_rng(8)
    f_enc = Tensor(rng.standard_normal((1, 4, 8, 8)))
    f_dec = Tensor(rng.standard_normal((1, 8, 4, 4)))
    with_off = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=True,
                         use_offset=True)
    without = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=True,
                        use_offset=False)
    np.testing.assert_allclose(with_off.data, without.data, atol=1e-12)


def test_offset_resample_integer_shift_oracle():
    rng = np.random.default_rng(9)
    f = rng.standard_normal((1, 2, 6, 6))
    guidance = Tensor(np.zeros((1, 8, 6, 6)))
    # force the head to saturate: huge positive weight on a constant-1 map
    g = Tensor(np.ones((1, 1, 6, 6)))
    w = Tensor(np.array([[0.0], [50.0]]))  # rows: (drow, dcol) heads
    b = Tensor(np.array([0.0, 0.0]))
    out = offset_resample(Tensor(f), g, w, b, max_offset=1.0).data
    # tanh(100) ~ 1 -> one-pixel shift along columns
    np.testing.assert_allclose(out[..., :-1], f[..., 1:], atol=1e-6)


def test_neighbor_cosine_maps_shape_and_range():
    rng = np.random.default_rng(10)
    f = Tensor(rng.standard_normal((2, 5, 6, 7)))
    maps = neighbor_cosine_maps(f).data
    assert maps.shape == (2, 8, 6, 7)
    assert np.all(maps <= 1.0 + 1e-8) and np.all(maps >= -1.0 - 1e-8)
    # identical neighbors in a constant field: interior similarity 1
    g = neighbor_cosine_maps(Tensor(np.ones((1, 3, 5, 5)))).data
    np.testing.assert_allclose(g[:, :, 1:-1, 1:-1], 1.0, atol=1e-8)


def test_fusion_gradients():
    store = fusion_store(seed=11, use_offset=True)
    rng = np.random.default_rng(12)
    # move kernel heads off zero for generic gradients
    for name, p in store.items():
        if p.data.ndim and not name.endswith("align.w"):
            p.data = p.data + 0.1 * rng.standard_normal(p.data.shape)
    f_enc = Tensor(rng.standard_normal((1, 4, 6, 6)))
    f_dec = Tensor(rng.standard_normal((1, 8, 3, 3)))
    cot = rng.standard_normal((1, 4, 6, 6))

    def loss_fn():
        out = fuse_skip(f_enc, f_dec, store, "f.", use_fusion=True,
                        use_offset=True)
        return ad.reduce_sum(ad.mul(out, Tensor(cot)))

    report = ad.check_params(loss_fn, list(store.items()), max_coords=4, seed=3)
    assert report.max_error <= 1e-5, report.lines()
