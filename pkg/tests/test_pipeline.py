import numpy as np
import pytest

from nlfv import decoder as dec
from nlfv import pipeline as P
from nlfv import synthetic as S
from nlfv import tensor as T
from nlfv.data import LFCoordinate


def psnr(a, b):
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0:
        return 99.0
    return min(99.0, 10.0 * np.log10(1.0 / mse))


def two_layer_scene(frames=1, flow_scale=0.0, velocity=(0.0, 0.0), w=64, h=64):
    return S.SceneSpec(
        width=w, height=h, grid_m=3, grid_n=3, frames=frames,
        disparity_scale=8.0, flow_scale=flow_scale,
        layers=(
            S.LayerSpec(disparity=0.25, velocity=(0.0, 0.0), texture="tinted", seed=1),
            S.LayerSpec(disparity=0.75, velocity=velocity, texture="checker", mask="blob", seed=2),
        ),
        seed=5,
    ).validate()


def flat_scene(frames=1):
    return S.SceneSpec(
        width=16, height=16, grid_m=3, grid_n=3, frames=frames,
        disparity_scale=8.0, flow_scale=0.0,
        layers=(S.LayerSpec(disparity=0.0, velocity=(0.0, 0.0), texture="noise", seed=3),),
        seed=11,
    ).validate()


def const_geom(z, u=0.5, v=0.5, h=16, w=16):
    g = np.stack([np.full((h, w), z), np.full((h, w), u), np.full((h, w), v)])
    return T.Tensor(g.astype(np.float32))


# ---------------------------------------------------------------------------
# flows


def test_spatial_flow_zero_offset():
    flow = P.spatial_flow(const_geom(0.7), (0.5, 0.5), (0.5, 0.5), 8.0)
    assert np.all(flow.data == 0)


def test_spatial_flow_uniform_value():
    flow = P.spatial_flow(const_geom(1.0), (1.0, 0.5), (0.5, 0.5), 8.0)
    np.testing.assert_allclose(flow.data[0], 4.0)
    np.testing.assert_allclose(flow.data[1], 0.0)


def test_spatial_flow_far_plane_is_static():
    flow = P.spatial_flow(const_geom(0.0), (0.0, 1.0), (1.0, 0.0), 8.0)
    assert np.all(flow.data == 0)


def test_temporal_flow_midpoint_is_static():
    flow = P.temporal_flow(const_geom(0.5, 0.5, 0.5), 0.0, 1.0, 5, 4.0)
    np.testing.assert_allclose(flow.data, 0.0, atol=1e-6)


def test_temporal_flow_unit_value():
    # encoded max forward motion, one frame gap: dx = flow_scale
    flow = P.temporal_flow(const_geom(0.5, 1.0, 0.5), 0.25, 0.0, 5, 4.0)
    np.testing.assert_allclose(flow.data[0], 4.0, rtol=1e-6)
    np.testing.assert_allclose(flow.data[1], 0.0, atol=1e-6)


def test_temporal_flow_antisymmetry():
    g = const_geom(0.5, 0.8, 0.3)
    fwd = P.temporal_flow(g, 0.25, 0.75, 5, 4.0)
    back = P.temporal_flow(g, 0.75, 0.25, 5, 4.0)
    np.testing.assert_allclose(fwd.data, -back.data, atol=1e-5)


# ---------------------------------------------------------------------------
# warp


def test_warp_zero_flow_identity():
    img = T.Tensor(np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32))
    out = P.warp(img, T.Tensor(np.zeros((2, 16, 16), np.float32)))
    np.testing.assert_array_equal(out.data, img.data)


def test_warp_integer_flow_matches_neighbor_view():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec)
    src, tgt = (0, 1, 0), (1, 1, 0)
    geom_src = T.Tensor(S.oracle_geometry(spec, ds.coordinate_of(*src)))
    sp = ds.coordinate_of(*src)
    tp = ds.coordinate_of(*tgt)
    flow = P.spatial_flow(geom_src, (sp.u, sp.v), (tp.u, tp.v), spec.disparity_scale)
    warped = P.warp(T.Tensor(ds.images[src]), flow)
    mask = S.warp_validity_mask(spec, src, tgt)
    diff = np.abs(warped.data - ds.images[tgt]).max(axis=0)
    assert diff[mask].max() == 0.0  # integer-shift scene: exact on the mask
    assert psnr(warped.data[:, mask], ds.images[tgt][:, mask]) > 35


def test_warp_locality_of_geometry():
    # changing depth at one pixel moves only that output pixel
    spec = two_layer_scene(w=16, h=16)
    ds = S.generate_synthetic(spec)
    src, tgt = (0, 1, 0), (1, 1, 0)
    sp, tp = ds.coordinate_of(*src), ds.coordinate_of(*tgt)
    geom = S.oracle_geometry(spec, sp).copy()
    base = P.warp(T.Tensor(ds.images[src]),
                  P.spatial_flow(T.Tensor(geom), (sp.u, sp.v), (tp.u, tp.v), 8.0)).data
    geom[0, 7, 9] += 0.1
    moved = P.warp(T.Tensor(ds.images[src]),
                   P.spatial_flow(T.Tensor(geom), (sp.u, sp.v), (tp.u, tp.v), 8.0)).data
    changed = np.abs(moved - base).max(axis=0) > 0
    assert changed[7, 9]
    changed[7, 9] = False
    assert not changed.any()


# ---------------------------------------------------------------------------
# occlusion weights


def test_occlusion_uniform_when_sources_agree():
    z = const_geom(0.5)
    tgt = T.slice_channels(z, 0, 1)
    weights = P.occlusion_weights(tgt, [tgt, tgt, tgt, tgt])
    np.testing.assert_allclose(weights.data, 0.25)


def test_occlusion_single_source_is_one():
    tgt = T.slice_channels(const_geom(0.3), 0, 1)
    other = T.slice_channels(const_geom(0.9), 0, 1)
    weights = P.occlusion_weights(tgt, [other])
    np.testing.assert_allclose(weights.data, 1.0)


def test_occlusion_closed_form_pair():
    tgt = T.slice_channels(const_geom(0.0), 0, 1)
    near = T.slice_channels(const_geom(0.0), 0, 1)
    far = T.slice_channels(const_geom(float(np.log(3.0))), 0, 1)
    weights = P.occlusion_weights(tgt, [near, far], kappa=1.0)
    np.testing.assert_allclose(weights.data[0], 0.75, rtol=1e-5)
    np.testing.assert_allclose(weights.data[1], 0.25, rtol=1e-5)


def test_occlusion_partition_of_unity():
    r = np.random.default_rng(3)
    tgt = T.Tensor(r.uniform(size=(1, 8, 8)).astype(np.float32))
    srcs = [T.Tensor(r.uniform(size=(1, 8, 8)).astype(np.float32)) for _ in range(5)]
    weights = P.occlusion_weights(tgt, srcs)
    np.testing.assert_allclose(weights.data.sum(axis=0), 1.0, atol=1e-5)


def test_occlusion_requires_sources():
    with pytest.raises(P.PipelineError):
        P.occlusion_weights(T.slice_channels(const_geom(0.5), 0, 1), [])


# ---------------------------------------------------------------------------
# spatial interpolation


def test_spatial_interp_zero_parallax_returns_common_image():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    out = P.interpolate_spatial(P.oracle_provider(spec), ds, LFCoordinate(0.5, 0.5, 0.5),
                                exclude_self=True)
    np.testing.assert_allclose(out.data, ds.images[(0, 0, 0)], atol=1e-6)


def test_spatial_interp_single_neighbor_is_warped_neighbor():
    spec = S.SceneSpec(
        width=16, height=16, grid_m=2, grid_n=1, frames=1,
        disparity_scale=4.0, flow_scale=0.0,
        layers=(S.LayerSpec(disparity=0.5, velocity=(0.0, 0.0), texture="noise", seed=4),),
        seed=9,
    ).validate()
    ds = S.generate_synthetic(spec)
    x = ds.coordinate_of(0, 0, 0)
    out = P.interpolate_spatial(P.oracle_provider(spec), ds, x, exclude_self=True)
    y = ds.coordinate_of(1, 0, 0)
    geom_y = T.Tensor(S.oracle_geometry(spec, y))
    flow = P.spatial_flow(geom_y, (y.u, y.v), (x.u, x.v), spec.disparity_scale)
    expected = P.warp(T.Tensor(ds.images[(1, 0, 0)]), flow)
    np.testing.assert_array_equal(out.data, expected.data)


def test_spatial_interp_heldout_center_oracle_bound():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec).with_holdout([(1, 1, 0)])
    x = ds.coordinate_of(1, 1, 0)
    out = P.interpolate_spatial(P.oracle_provider(spec), ds, x, exclude_self=True)
    value = psnr(out.data, ds.reference_image(1, 1, 0))
    assert value > 30, f"oracle-geometry center reconstruction {value:.2f} dB"


def test_spatial_interp_refuses_empty_neighbors():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    lone = ds.with_holdout([idx for idx in ds.all_indices() if idx != (1, 1, 0)])
    with pytest.raises(P.PipelineError):
        P.interpolate_spatial(P.oracle_provider(spec), lone, ds.coordinate_of(1, 1, 0),
                              exclude_self=True)


def test_spatial_interp_never_reads_holdout():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec).with_holdout([(0, 0, 0)])
    x = ds.coordinate_of(1, 1, 0)
    out = P.interpolate_spatial(P.oracle_provider(spec), ds, x, exclude_self=True)
    # removing the holdout image entirely must not change the result
    trimmed_images = {k: v for k, v in ds.images.items() if k != (0, 0, 0)}
    import dataclasses
    ds2 = dataclasses.replace(ds, images=trimmed_images)
    out2 = P.interpolate_spatial(P.oracle_provider(spec), ds2, x, exclude_self=True)
    np.testing.assert_array_equal(out.data, out2.data)


# ---------------------------------------------------------------------------
# temporal interpolation


def test_on_frame_time_collapses_to_spatial_exactly():
    spec = two_layer_scene(frames=3, flow_scale=2.0, velocity=(2.0, 0.0))
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    x = LFCoordinate(0.3, 0.7, 0.5)  # frame 1 of 3
    full = P.interpolate_temporal(provider, ds, x)
    spatial = P.interpolate_spatial(provider, ds, x, exclude_self=False)
    np.testing.assert_array_equal(full.data, spatial.data)


def test_static_scene_temporal_blend_of_identical_proxies():
    spec = flat_scene(frames=3)
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    out = P.interpolate_temporal(provider, ds, LFCoordinate(0.5, 0.5, 0.25))
    np.testing.assert_allclose(out.data, ds.images[(0, 0, 0)], atol=1e-5)


def test_fully_held_out_frame_uses_neighboring_frames():
    # when every view at a frame is held out, on-frame time must fall back to
    # temporal sources instead of collapsing onto an empty spatial stage
    spec = flat_scene(frames=3)
    ds = S.generate_synthetic(spec)
    held = ds.with_holdout(frozenset((i, j, 1) for i in range(3) for j in range(3)))
    provider = P.oracle_provider(spec)
    out = P.interpolate_temporal(provider, held, LFCoordinate(0.5, 0.5, 0.5))
    np.testing.assert_allclose(out.data, ds.images[(0, 0, 0)], atol=1e-5)


def test_enclosing_frames_skip_held_out():
    spec = flat_scene(frames=5)
    ds = S.generate_synthetic(spec)
    held = ds.with_holdout(frozenset((i, j, 2) for i in range(3) for j in range(3)))
    assert P._enclosing_frames(held, 0.5) == [1, 3]
    assert P._enclosing_frames(held, 0.25) == [1]
    assert P._enclosing_frames(ds, 0.5) == [2]


def test_moving_scene_midtime_oracle_reconstruction():
    spec = two_layer_scene(frames=3, flow_scale=2.0, velocity=(2.0, 0.0))
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    t = 0.25  # halfway between frames 0 and 1
    out = P.interpolate_temporal(provider, ds, LFCoordinate(0.5, 0.5, t))
    truth = S.render_view(spec, 0.5, 0.5, t)
    value = psnr(out.data, truth)
    assert value > 30, f"mid-time oracle reconstruction {value:.2f} dB"


# ---------------------------------------------------------------------------
# render modes


def test_render_blend_observed_coordinate_is_exact():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec)
    out = P.render(None, None, ds, ds.coordinate_of(0, 2, 0), mode="blend")
    np.testing.assert_allclose(out, ds.images[(0, 2, 0)], atol=1e-7)


def test_render_blend_heldout_corner_falls_back():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec).with_holdout([(0, 0, 0)])
    out = P.render(None, None, ds, ds.coordinate_of(0, 0, 0), mode="blend")
    assert out.shape == (3, 64, 64)
    assert np.isfinite(out).all()


def test_render_blend_midway_is_ghosted_average():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec)
    out = P.render(None, None, ds, LFCoordinate(0.25, 0.0, 0.5), mode="blend")
    expected = 0.5 * (ds.images[(0, 0, 0)].astype(np.float64) + ds.images[(1, 0, 0)])
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_full_equals_no_occlusion_on_identical_inputs():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    x = LFCoordinate(0.5, 0.5, 0.5)
    a = P.interpolate_temporal(provider, ds, x, uniform=False)
    b = P.interpolate_temporal(provider, ds, x, uniform=True)
    np.testing.assert_array_equal(a.data, b.data)


def test_down_up_block_constant():
    spec = two_layer_scene()
    ds = S.generate_synthetic(spec)
    out = P.render(None, None, ds, LFCoordinate(0.4, 0.6, 0.5), mode="down_up",
                   provider=P.oracle_provider(spec), down_factor=8)
    blocks = out.reshape(3, 8, 8, 8, 8)
    assert np.all(blocks == blocks[:, :, :1, :, :1])


def test_down_up_requires_divisible_factor():
    with pytest.raises(P.PipelineError):
        P.box_down_up(np.zeros((3, 64, 64), np.float32), 7)


def test_no_warp_requires_color_decoder():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    config = dec.DecoderConfig(width=16, height=16, base_channels=8, min_channels=4).validate()
    weights = dec.init_decoder(config)
    with pytest.raises(P.PipelineError):
        P.render(weights, config, ds, LFCoordinate(0.5, 0.5, 0.5), mode="no_warp")


def test_no_warp_color_decoder_returns_decode():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    config = dec.DecoderConfig(width=16, height=16, base_channels=8, min_channels=4,
                               mode="color").validate()
    weights = dec.init_decoder(config)
    x = LFCoordinate(0.5, 0.5, 0.5)
    out = P.render(weights, config, ds, x, mode="no_warp")
    np.testing.assert_array_equal(out, dec.decode(weights, config, x).data)


# ---------------------------------------------------------------------------
# applications


def test_dof_zero_aperture_single_render():
    spec = two_layer_scene(w=32, h=32)
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    x = LFCoordinate(0.5, 0.5, 0.5)
    blur = P.render_dof(None, None, ds, x, aperture=0.0, samples=9, provider=provider)
    sharp = P.render(None, None, ds, x, provider=provider)
    np.testing.assert_array_equal(blur, sharp)


def test_dof_deterministic():
    spec = two_layer_scene(w=32, h=32)
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    x = LFCoordinate(0.5, 0.5, 0.5)
    a = P.render_dof(None, None, ds, x, aperture=0.2, samples=5, provider=provider)
    b = P.render_dof(None, None, ds, x, aperture=0.2, samples=5, provider=provider)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - P.render(None, None, ds, x, provider=provider)).max() > 1e-4


def test_motion_blur_only_affects_moving_layer():
    spec = two_layer_scene(frames=3, flow_scale=2.0, velocity=(2.0, 0.0))
    ds = S.generate_synthetic(spec)
    provider = P.oracle_provider(spec)
    center = LFCoordinate(0.5, 0.5, 0.5)
    sharp = P.render(None, None, ds, center, provider=provider)
    blur = P.render_motion_blur(None, None, ds, center, shutter=0.5, samples=5,
                                provider=provider)
    # static = owned by the background across the whole shutter span
    static = np.ones((64, 64), bool)
    for t in np.linspace(0.25, 0.75, 7):
        static &= S.ownership_map(spec, 0.5, 0.5, float(t)) == 0
    moving = ~static
    l2_static = float(np.mean((blur - sharp)[:, static] ** 2))
    l2_moving = float(np.mean((blur - sharp)[:, moving] ** 2))
    assert l2_static < 1e-4
    assert l2_moving > 10 * max(l2_static, 1e-9)


def test_invalid_sample_counts():
    spec = flat_scene()
    ds = S.generate_synthetic(spec)
    with pytest.raises(P.PipelineError):
        P.render_dof(None, None, ds, LFCoordinate(0.5, 0.5, 0.5), 0.1, 0,
                     provider=P.oracle_provider(spec))
    with pytest.raises(P.PipelineError):
        P.render_motion_blur(None, None, ds, LFCoordinate(0.5, 0.5, 0.5), 0.1, -1,
                             provider=P.oracle_provider(spec))


# ---------------------------------------------------------------------------
# differentiability through the whole pipeline


def test_loss_gradient_through_temporal_pipeline():
    spec = two_layer_scene(frames=2, flow_scale=1.0, velocity=(1.0, 0.0), w=8, h=8)
    ds = S.generate_synthetic(spec)
    config = dec.DecoderConfig(width=8, height=8, base_channels=8, min_channels=4,
                               seed=1).validate()
    weights = dec.init_decoder(config)
    target = T.Tensor(S.render_view(spec, 0.4, 0.6, 0.5))

    def loss_value():
        provider = P.decoder_provider(weights, config)
        out = P.interpolate_temporal(provider, ds, LFCoordinate(0.4, 0.6, 0.5))
        return T.reduce_mean_abs(T.subtract(out, target))

    with T.Graph() as g:
        loss = loss_value()
    T.backward(loss, g)

    r = np.random.default_rng(12)
    names = [n for n in weights if weights[n].data.size > 1]
    checked = 0
    for _ in range(5):
        name = names[int(r.integers(len(names)))]
        idx = np.unravel_index(int(r.integers(weights[name].data.size)),
                               weights[name].data.shape)
        analytic = weights[name].grad[idx]
        step = 1e-2
        original = weights[name].data[idx]
        weights[name].data[idx] = original + step
        up = loss_value().item()
        weights[name].data[idx] = original - step
        down = loss_value().item()
        weights[name].data[idx] = original
        numeric = (up - down) / (2 * step)
        assert abs(analytic - numeric) / max(1.0, abs(numeric)) < 1e-2, name
        checked += 1
    assert checked == 5
