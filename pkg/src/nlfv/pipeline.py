"""Differentiable view/time interpolation: flows, warping, occlusion, renders.

The pipeline owns no parameters.  Given a geometry provider (the decoder, or an
analytic stand-in for tests) it converts decoded geometry into pixel flows,
inverse-warps observed neighbor views to the requested coordinate, resolves
their disagreements with a soft occlusion weighting, and sums.  Novel times go
through a second pass that warps the spatial results at the two nearest frames.
"""

import numpy as np

from . import decoder as dec
from . import tensor as T
from .data import LFCoordinate

DEFAULT_KAPPA = 50.0  # occlusion sharpness for depths in (0,1)

RENDER_MODES = ("full", "no_occlusion", "no_warp", "blend", "down_up")


class PipelineError(Exception):
    pass


def decoder_provider(weights, config):
    """Geometry provider backed by the trainable decoder; one batched forward."""

    def provide(coords):
        batch = dec.decode_batch(weights, config, np.array([c.as_tuple() for c in coords], np.float32))
        return [T.index_stack(batch, i) for i in range(len(coords))]

    return provide


def oracle_provider(spec):
    """Geometry provider that decodes nothing: analytic scene ground truth."""
    from . import synthetic

    def provide(coords):
        return [T.Tensor(synthetic.oracle_geometry(spec, c)) for c in coords]

    return provide


# ---------------------------------------------------------------------------
# flows and warping


def spatial_flow(geom, src_pos, tgt_pos, disparity_scale):
    """Per-pixel flow (2,H,W): depth * disparity_scale * (src - tgt) per axis.

    The geometry is the one decoded at the SOURCE view, indexed at target pixel
    positions; inverting the forward flow by negation is what makes that valid.
    """
    su, sv = src_pos
    tu, tv = tgt_pos
    depth = T.slice_channels(geom, 0, 1)
    fx = T.scale(depth, disparity_scale * (su - tu))
    fy = T.scale(depth, disparity_scale * (sv - tv))
    return T.concat_channels([fx, fy])


def temporal_flow(geom, src_t, tgt_t, frames, flow_scale):
    """Flow from signed per-frame motion channels over the src-tgt time gap."""
    gap = (src_t - tgt_t) * (frames - 1)
    factor = flow_scale * gap
    shape = (1,) + geom.data.shape[-2:]
    parts = []
    for chan in (1, 2):
        w = T.slice_channels(geom, chan, chan + 1)
        # (2w - 1) * factor, built as w * 2*factor + (-factor)
        parts.append(T.add(T.scale(w, 2.0 * factor), T.Tensor(np.full(shape, -factor, np.float32))))
    return T.concat_channels(parts)


_base_grids = {}


def _base_grid(h, w):
    if (h, w) not in _base_grids:
        xs = np.broadcast_to(np.arange(w, dtype=np.float32)[None, :], (h, w))
        ys = np.broadcast_to(np.arange(h, dtype=np.float32)[:, None], (h, w))
        _base_grids[(h, w)] = np.ascontiguousarray(np.stack([xs, ys]))
    return _base_grids[(h, w)]


def warp(image, flow):
    """Inverse warp: output(p) = image sampled at p + flow(p), border-clamped."""
    h, w = flow.data.shape[-2:]
    coords = T.add(flow, T.Tensor(_base_grid(h, w)))
    return T.grid_sample_bilinear(image, coords)


def occlusion_weights(tgt_z, warped_src_z, kappa=DEFAULT_KAPPA):
    """Softmax over sources of -kappa * |target depth - warped source depth|.

    Returns a (K, 1, H, W) stack forming a partition of unity per pixel.
    """
    if not warped_src_z:
        raise PipelineError("occlusion weighting needs at least one source")
    logits = [T.scale(T.abs_val(T.subtract(tgt_z, wz)), -kappa) for wz in warped_src_z]
    return T.softmax_over_stack(T.stack_maps(logits))


def _uniform_weights(count, shape):
    return T.Tensor(np.full((count,) + shape, 1.0 / count, np.float32))


# ---------------------------------------------------------------------------
# spatial stage (within one frame)


def _frame_index(dataset, t):
    if dataset.frames == 1:
        return 0
    pos = t * (dataset.frames - 1)
    k = int(round(pos))
    if abs(pos - k) > 1e-6:
        raise PipelineError(f"t={t} is not on an observed frame")
    return k


def _self_index(dataset, x):
    try:
        idx = dataset.index_of(x)
    except Exception:
        return None
    return idx if idx in dataset.images else None


def interpolate_spatial(provider, dataset, x, exclude_self=True, kappa=DEFAULT_KAPPA,
                        uniform=False):
    """Occlusion-weighted sum of all same-frame neighbors warped to x.

    The neighbor set is every observed non-holdout view at x's frame, minus the
    observation at x itself when exclude_self is set (the training condition).
    """
    k = _frame_index(dataset, x.t)
    neighbors = dataset.views_at_frame(k)
    if exclude_self:
        self_idx = _self_index(dataset, x)
        if self_idx is not None:
            neighbors = [idx for idx in neighbors if idx != self_idx]
    if not neighbors:
        raise PipelineError(f"no usable neighbors at frame {k}")

    coords = [x] + [dataset.coordinate_of(*idx) for idx in neighbors]
    geoms = provider(coords)
    geom_x, geom_ys = geoms[0], geoms[1:]

    tgt_z = T.slice_channels(geom_x, 0, 1)
    warped_colors = []
    warped_depths = []
    for idx, geom_y, y in zip(neighbors, geom_ys, coords[1:]):
        flow = spatial_flow(geom_y, (y.u, y.v), (x.u, x.v), dataset.disparity_scale)
        warped_colors.append(warp(T.Tensor(dataset.view_image(*idx)), flow))
        warped_depths.append(warp(T.slice_channels(geom_y, 0, 1), flow))
    if uniform:
        weights = _uniform_weights(len(neighbors), tgt_z.data.shape)
    else:
        weights = occlusion_weights(tgt_z, warped_depths, kappa)
    terms = [T.multiply(T.index_stack(weights, i), c) for i, c in enumerate(warped_colors)]
    return T.sum_over_stack(T.stack_maps(terms))


# ---------------------------------------------------------------------------
# temporal stage


def _observed_frames(dataset):
    frames = sorted({idx[2] for idx in dataset.train_indices()})
    if not frames:
        raise PipelineError("dataset has no observed frames to interpolate from")
    return frames


def _enclosing_frames(dataset, t):
    """Bracketing frames for t, restricted to frames that still hold at least
    one observation: a fully held-out frame cannot anchor the spatial stage, so
    its neighbors take over as temporal sources."""
    observed = _observed_frames(dataset)
    if dataset.frames == 1 or len(observed) == 1:
        return [observed[0]]
    pos = t * (dataset.frames - 1)
    lo = max((k for k in observed if k <= pos + 1e-6), default=None)
    hi = min((k for k in observed if k >= pos - 1e-6), default=None)
    if lo is None:
        return [hi]
    if hi is None:
        return [lo]
    if lo == hi or abs(pos - lo) <= 1e-6:
        return [lo]
    if abs(pos - hi) <= 1e-6:
        return [hi]
    return [lo, hi]


def _frame_time(dataset, k):
    return 0.5 if dataset.frames == 1 else k / (dataset.frames - 1)


def temporal_combine(provider, dataset, x, src_frames, exclude_self=False,
                     kappa=DEFAULT_KAPPA, uniform=False):
    """Warp spatial reconstructions at the given frames to x and blend them."""
    if not src_frames:
        raise PipelineError("temporal combination needs at least one source frame")
    proxies = []
    src_coords = []
    for k in src_frames:
        xk = LFCoordinate(x.u, x.v, _frame_time(dataset, k))
        src_coords.append(xk)
        proxies.append(
            interpolate_spatial(provider, dataset, xk, exclude_self=exclude_self,
                                kappa=kappa, uniform=uniform)
        )
    geoms = provider([x] + src_coords)
    tgt_z = T.slice_channels(geoms[0], 0, 1)
    warped_colors = []
    warped_depths = []
    for geom_k, xk in zip(geoms[1:], src_coords):
        flow = temporal_flow(geom_k, xk.t, x.t, dataset.frames, dataset.flow_scale)
        warped_colors.append(warp(proxies[len(warped_colors)], flow))
        warped_depths.append(warp(T.slice_channels(geom_k, 0, 1), flow))
    if uniform:
        weights = _uniform_weights(len(src_frames), tgt_z.data.shape)
    else:
        weights = occlusion_weights(tgt_z, warped_depths, kappa)
    terms = [T.multiply(T.index_stack(weights, i), c) for i, c in enumerate(warped_colors)]
    return T.sum_over_stack(T.stack_maps(terms))


def interpolate_temporal(provider, dataset, x, exclude_self=False,
                         kappa=DEFAULT_KAPPA, uniform=False):
    """Full reconstruction at any coordinate; on-frame times collapse to the
    spatial stage exactly."""
    frames = _enclosing_frames(dataset, x.t)
    if len(frames) == 1:
        xk = LFCoordinate(x.u, x.v, _frame_time(dataset, frames[0]))
        return interpolate_spatial(provider, dataset, xk, exclude_self=exclude_self,
                                   kappa=kappa, uniform=uniform)
    return temporal_combine(provider, dataset, x, frames, exclude_self=exclude_self,
                            kappa=kappa, uniform=uniform)


# ---------------------------------------------------------------------------
# render modes


def _blend_axis(value, count):
    """Bracketing indices and tent weights along one grid axis."""
    if count == 1:
        return [(0, 1.0)]
    pos = value * (count - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, count - 1)
    frac = pos - lo
    if lo == hi or frac <= 1e-9:
        return [(lo, 1.0)]
    return [(lo, 1.0 - frac), (hi, frac)]


def render_blend(dataset, x):
    """Bilinear view blend with tent weights, no warping, no decoder.

    Holdout views drop out of the enclosing set; remaining weights renormalize.
    If every enclosing view is held out, falls back to a uniform average of the
    nearest available observations.
    """
    taps = []
    for i, wi in _blend_axis(x.u, dataset.grid_m):
        for j, wj in _blend_axis(x.v, dataset.grid_n):
            for k, wk in _blend_axis(x.t, dataset.frames):
                idx = (i, j, k)
                if idx in dataset.images and idx not in dataset.holdout:
                    taps.append((idx, wi * wj * wk))
    total = sum(w for _, w in taps)
    if total <= 1e-12:
        taps = _nearest_available(dataset, x)
        total = sum(w for _, w in taps)
    out = np.zeros((3, dataset.height, dataset.width))
    for idx, w in taps:
        out += (w / total) * dataset.images[idx].astype(np.float64)
    return out.astype(np.float32)


def _nearest_available(dataset, x):
    best = None
    best_d = None
    for idx in dataset.train_indices():
        c = dataset.coordinate_of(*idx)
        d = (c.u - x.u) ** 2 + (c.v - x.v) ** 2 + (c.t - x.t) ** 2
        if best_d is None or d < best_d - 1e-12:
            best, best_d = [idx], d
        elif abs(d - best_d) <= 1e-12:
            best.append(idx)
    if not best:
        raise PipelineError("no available views to blend")
    return [(idx, 1.0) for idx in best]


def box_down_up(image, factor):
    """Box-downsample by an integer factor, then nearest-upsample back."""
    c, h, w = image.shape
    if factor < 1 or h % factor or w % factor:
        raise PipelineError(f"down_up factor {factor} does not divide {w}x{h}")
    small = image.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return np.repeat(np.repeat(small, factor, axis=1), factor, axis=2).astype(np.float32)


def render(weights, config, dataset, x, mode="full", kappa=DEFAULT_KAPPA,
           provider=None, down_factor=8):
    """Render one frame at x in the requested mode; returns (3, H, W) float32."""
    if mode not in RENDER_MODES:
        raise PipelineError(f"unknown render mode {mode!r}")
    if mode == "blend":
        return np.clip(render_blend(dataset, x), 0.0, 1.0)
    if mode == "no_warp":
        if config is None or config.mode != "color":
            raise PipelineError("no_warp rendering requires a color-mode decoder")
        out = dec.decode(weights, config, x)
        return np.clip(out.data, 0.0, 1.0)
    if provider is None:
        provider = decoder_provider(weights, config)
    out = interpolate_temporal(provider, dataset, x, exclude_self=False, kappa=kappa,
                               uniform=(mode == "no_occlusion"))
    result = np.clip(out.data, 0.0, 1.0)
    if mode == "down_up":
        result = np.clip(box_down_up(result, down_factor), 0.0, 1.0)
    return result


def _clamp01(value):
    return min(1.0, max(0.0, value))


def render_dof(weights, config, dataset, center, aperture, samples,
               kappa=DEFAULT_KAPPA, provider=None):
    """Average of full renders over a deterministic disc of view offsets."""
    if samples < 1:
        raise PipelineError("render_dof needs samples >= 1")
    if aperture == 0.0 or samples == 1:
        return render(weights, config, dataset, center, "full", kappa, provider)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    acc = np.zeros((3, dataset.height, dataset.width), np.float64)
    for s in range(samples):
        r = aperture * np.sqrt((s + 0.5) / samples)
        theta = s * golden
        x = LFCoordinate(
            _clamp01(center.u + r * np.cos(theta)),
            _clamp01(center.v + r * np.sin(theta)),
            center.t,
        )
        acc += render(weights, config, dataset, x, "full", kappa, provider)
    return np.clip(acc / samples, 0.0, 1.0).astype(np.float32)


def render_motion_blur(weights, config, dataset, center, shutter, samples,
                       kappa=DEFAULT_KAPPA, provider=None):
    """Average of full renders over a uniform time span around center.t."""
    if samples < 1:
        raise PipelineError("render_motion_blur needs samples >= 1")
    if shutter == 0.0 or samples == 1:
        return render(weights, config, dataset, center, "full", kappa, provider)
    times = np.linspace(center.t - shutter / 2.0, center.t + shutter / 2.0, samples)
    acc = np.zeros((3, dataset.height, dataset.width), np.float64)
    for t in times:
        x = LFCoordinate(center.u, center.v, _clamp01(float(t)))
        acc += render(weights, config, dataset, x, "full", kappa, provider)
    return np.clip(acc / samples, 0.0, 1.0).astype(np.float32)
