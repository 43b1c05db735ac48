"""Procedural light-field-video scenes with analytic ground-truth geometry.

A scene is a stack of fronto-parallel textured layers.  Layer content at view
(u, v) and frame time is the layer texture translated by

    shift = disparity * disparity_scale * ((u, v) - (0.5, 0.5)) + velocity * frame

so parallax follows exactly the displacement convention the render pipeline
assumes, and the front-most layer at every pixel is known in closed form.
Textures are procedural on an infinite lattice (pure integer hashes, no RNG
state), which makes any fractional-shift sample well defined.
"""

import dataclasses
import json

import numpy as np

from .data import LFCoordinate, LightFieldDataset

TEXTURES = ("noise", "checker", "tinted")
MASKS = ("full", "blob")


class SceneError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    disparity: float  # normalized: 0 = far plane, 1 = nearest
    velocity: tuple  # (px/frame, px/frame)
    texture: str
    mask: str = "full"
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    grid_m: int
    grid_n: int
    frames: int
    disparity_scale: float
    flow_scale: float
    layers: tuple
    seed: int = 0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise SceneError("scene size must be positive")
        if self.grid_m < 1 or self.grid_n < 1 or self.frames < 1:
            raise SceneError("grid and frame counts must be positive")
        if self.disparity_scale <= 0:
            raise SceneError("disparity_scale must be > 0")
        if self.flow_scale < 0:
            raise SceneError("flow_scale must be >= 0")
        if not self.layers:
            raise SceneError("scene needs at least one layer")
        if self.layers[0].mask != "full":
            raise SceneError("farthest layer must have a full mask (background coverage)")
        prev = -1.0
        for pos, layer in enumerate(self.layers):
            if not (0.0 <= layer.disparity <= 1.0):
                raise SceneError(f"layer {pos}: disparity {layer.disparity} outside [0,1]")
            if layer.disparity <= prev:
                raise SceneError("layers must be ordered far-to-near, disparity strictly increasing")
            prev = layer.disparity
            if layer.texture not in TEXTURES:
                raise SceneError(f"layer {pos}: unknown texture {layer.texture!r}")
            if layer.mask not in MASKS:
                raise SceneError(f"layer {pos}: unknown mask {layer.mask!r}")
            vx, vy = layer.velocity
            if abs(vx) > self.flow_scale or abs(vy) > self.flow_scale:
                raise SceneError(
                    f"layer {pos}: velocity ({vx},{vy}) exceeds flow_scale {self.flow_scale}"
                )
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["grid"] = [d.pop("grid_m"), d.pop("grid_n")]
        for layer in d["layers"]:
            layer["velocity"] = list(layer["velocity"])
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            layers = tuple(
                LayerSpec(
                    disparity=float(entry["disparity"]),
                    velocity=tuple(entry.get("velocity", (0.0, 0.0))),
                    texture=entry.get("texture", "noise"),
                    mask=entry.get("mask", "full"),
                    seed=int(entry.get("seed", pos * 101)),
                )
                for pos, entry in enumerate(d["layers"])
            )
            m, n = d["grid"]
            spec = cls(
                width=int(d["width"]),
                height=int(d["height"]),
                grid_m=int(m),
                grid_n=int(n),
                frames=int(d.get("frames", 1)),
                disparity_scale=float(d["disparity_scale"]),
                flow_scale=float(d.get("flow_scale", 0.0)),
                layers=layers,
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise SceneError(f"malformed scene spec: {e}") from None
        return spec.validate()

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except OSError as e:
            raise SceneError(f"cannot read scene spec: {e}") from None
        except json.JSONDecodeError as e:
            raise SceneError(f"{path}: malformed JSON: {e}") from None
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# infinite-lattice textures


_MASK32 = (1 << 32) - 1


def _hash01(ix, iy, seed):
    """Avalanche-hash integer lattice coords to uniform [0,1).  Pure, stateless."""
    h = (ix.astype(np.int64) * 374761393 + iy.astype(np.int64) * 668265263) & _MASK32
    h = (h ^ (seed * 2246822519 & _MASK32)) & _MASK32
    h ^= h >> 13
    h = (h * 1274126177) & _MASK32
    h ^= h >> 16
    return h / float(1 << 32)


def _value_noise(sx, sy, scale, seed):
    """Bilinear value noise over a lattice with the given spacing in pixels."""
    gx, gy = sx / scale, sy / scale
    x0, y0 = np.floor(gx).astype(np.int64), np.floor(gy).astype(np.int64)
    fx, fy = gx - x0, gy - y0
    v00 = _hash01(x0, y0, seed)
    v01 = _hash01(x0 + 1, y0, seed)
    v10 = _hash01(x0, y0 + 1, seed)
    v11 = _hash01(x0 + 1, y0 + 1, seed)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def _texture_rgb(kind, sx, sy, seed):
    if kind == "noise":
        chans = [_value_noise(sx, sy, 6.0, seed + 7919 * c) for c in range(3)]
        return np.stack(chans)
    if kind == "checker":
        parity = ((np.floor(sx / 8.0) + np.floor(sy / 8.0)).astype(np.int64)) & 1
        zero = np.zeros(1, np.int64)
        color_a = np.array([_hash01(zero, zero, seed + 31 * c)[0] for c in range(3)])
        color_b = np.array([_hash01(zero, zero, seed + 67 * c + 5)[0] for c in range(3)])
        return np.where(parity[None], color_a[:, None, None], color_b[:, None, None])
    if kind == "tinted":
        tint = np.stack([_value_noise(sx, sy, 32.0, seed + 131 * c) for c in range(3)])
        detail = _value_noise(sx, sy, 4.0, seed + 977)
        return tint * (0.4 + 0.6 * detail[None])
    raise SceneError(f"unknown texture {kind!r}")


def _layer_mask(layer, sx, sy):
    if layer.mask == "full":
        return np.ones(sx.shape, bool)
    # blob: coarse value noise thresholded at its median level
    return _value_noise(sx, sy, 16.0, layer.seed + 40503) >= 0.5


def _layer_shift(layer, spec, u, v, frame):
    dx = layer.disparity * spec.disparity_scale * (u - 0.5) + layer.velocity[0] * frame
    dy = layer.disparity * spec.disparity_scale * (v - 0.5) + layer.velocity[1] * frame
    return dx, dy


def _pixel_centers(spec):
    xs = np.arange(spec.width, dtype=np.float64) + 0.5
    ys = np.arange(spec.height, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _frame_of(spec, t):
    return t * (spec.frames - 1) if spec.frames > 1 else 0.0


def render_view(spec, u, v, t):
    """Render the scene at any continuous coordinate (u, v, t) in [0,1]^3."""
    px, py = _pixel_centers(spec)
    frame = _frame_of(spec, t)
    out = np.zeros((3, spec.height, spec.width))
    for layer in spec.layers:
        dx, dy = _layer_shift(layer, spec, u, v, frame)
        sx, sy = px - dx, py - dy
        color = _texture_rgb(layer.texture, sx, sy, spec.seed * 8191 + layer.seed)
        mask = _layer_mask(layer, sx, sy)
        out = np.where(mask[None], color, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def ownership_map(spec, u, v, t):
    """Index of the front-most layer at every pixel of view (u, v, t)."""
    px, py = _pixel_centers(spec)
    frame = _frame_of(spec, t)
    own = np.zeros((spec.height, spec.width), np.int64)
    for pos, layer in enumerate(spec.layers):
        dx, dy = _layer_shift(layer, spec, u, v, frame)
        own = np.where(_layer_mask(layer, px - dx, py - dy), pos, own)
    return own


def oracle_geometry(spec, x):
    """Ground-truth geometry map at x, encoded as the decoder would emit it.

    Channel 0 is the front-most layer's normalized disparity; channels 1 and 2
    encode its velocity as 0.5 + velocity / (2 * flow_scale) so that the
    pipeline's signed decoding (2w - 1) * flow_scale recovers px/frame motion.
    """
    own = ownership_map(spec, x.u, x.v, x.t)
    disp = np.array([layer.disparity for layer in spec.layers])
    if spec.flow_scale > 0:
        enc_u = np.array([0.5 + layer.velocity[0] / (2 * spec.flow_scale) for layer in spec.layers])
        enc_v = np.array([0.5 + layer.velocity[1] / (2 * spec.flow_scale) for layer in spec.layers])
    else:
        enc_u = np.full(len(spec.layers), 0.5)
        enc_v = np.full(len(spec.layers), 0.5)
    return np.stack([disp[own], enc_u[own], enc_v[own]]).astype(np.float32)


def generate_synthetic(spec):
    """Materialize the scene at every grid index as a dataset."""
    spec.validate()
    images = {}
    for i in range(spec.grid_m):
        for j in range(spec.grid_n):
            for k in range(spec.frames):
                u = i / (spec.grid_m - 1) if spec.grid_m > 1 else 0.5
                v = j / (spec.grid_n - 1) if spec.grid_n > 1 else 0.5
                t = k / (spec.frames - 1) if spec.frames > 1 else 0.5
                images[(i, j, k)] = render_view(spec, u, v, t)
    return LightFieldDataset(
        grid_m=spec.grid_m,
        grid_n=spec.grid_n,
        frames=spec.frames,
        width=spec.width,
        height=spec.height,
        images=images,
        disparity_scale=spec.disparity_scale,
        flow_scale=spec.flow_scale,
    ).validate()


def oracle_geometry_at_index(spec, dataset, i, j, k):
    return oracle_geometry(spec, dataset.coordinate_of(i, j, k))


def warp_validity_mask(spec, src_index, tgt_index):
    """Pixels of the target view where warping the source with source-decoded
    geometry must reproduce the target: the source's front-most layer at the
    target pixel supplies the flow, so validity needs (a) that flow to match the
    target owner's disparity, (b) the sample footprint in bounds, and (c) the
    source to actually show the target's layer there (no disocclusion).
    """
    si, sj, sk = src_index
    ti, tj, tk = tgt_index
    if sk != tk:
        raise SceneError("warp validity mask is defined for same-frame view pairs")

    def pos(i, j):
        u = i / (spec.grid_m - 1) if spec.grid_m > 1 else 0.5
        v = j / (spec.grid_n - 1) if spec.grid_n > 1 else 0.5
        return u, v

    t = sk / (spec.frames - 1) if spec.frames > 1 else 0.5
    su, sv = pos(si, sj)
    tu, tv = pos(ti, tj)
    own_src = ownership_map(spec, su, sv, t)
    own_tgt = ownership_map(spec, tu, tv, t)
    disp = np.array([layer.disparity for layer in spec.layers])

    # flow actually applied by the pipeline: source geometry indexed at target p
    flow_x = disp[own_src] * spec.disparity_scale * (su - tu)
    flow_y = disp[own_src] * spec.disparity_scale * (sv - tv)
    ok_flow = disp[own_src] == disp[own_tgt]

    xs = np.arange(spec.width, dtype=np.float64)[None, :] + flow_x
    ys = np.arange(spec.height, dtype=np.float64)[:, None] + flow_y
    in_bounds = (xs >= 0) & (xs <= spec.width - 1) & (ys >= 0) & (ys <= spec.height - 1)

    # every corner of the bilinear footprint must belong to the target's layer
    ok_owner = np.ones(own_tgt.shape, bool)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, spec.width - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, spec.height - 1)
    x1 = np.clip(x0 + 1, 0, spec.width - 1)
    y1 = np.clip(y0 + 1, 0, spec.height - 1)
    fx = xs - np.floor(xs)
    fy = ys - np.floor(ys)
    for cx, cy, wgt in ((x0, y0, (1 - fx) * (1 - fy)), (x1, y0, fx * (1 - fy)),
                        (x0, y1, (1 - fx) * fy), (x1, y1, fx * fy)):
        corner_ok = (own_src[cy, cx] == own_tgt) | (wgt < 1e-12)
        ok_owner &= corner_ok
    return ok_flow & in_bounds & ok_owner
