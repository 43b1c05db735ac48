"""Coordinate-to-geometry decoder: a tiny upsampling CNN fed only (u, v, t).

A fully connected layer expands the 3-vector coordinate into a 2x2 image with
base_channels channels.  Normalized pixel-grid channels (coord-conv, x and y in
[-1, 1]) are appended there and again after every stage.  Each stage doubles the
resolution with nearest upsampling, applies a same-padded 3x3 conv and a leaky
ReLU, halving the channel count down to a floor.  A final 3x3 conv projects to
3 channels through a sigmoid, and the result is center-cropped to the exact
target size.  In geometry mode the channels are (depth, motion-x, motion-y), all
in (0, 1); color mode reuses the same network as a direct RGB regressor.

The decoder never sees image data: its inputs are the coordinate and weights.
"""

import dataclasses
import json

import numpy as np

from . import tensor as T


class DecoderConfigError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class DecoderConfig:
    width: int
    height: int
    base_channels: int = 128
    min_channels: int = 8
    mode: str = "geometry"  # "geometry" or "color"
    alpha: float = 0.2
    seed: int = 0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise DecoderConfigError(f"unreachable resolution {self.width}x{self.height}")
        if self.base_channels < self.min_channels or self.min_channels < 1:
            raise DecoderConfigError("need base_channels >= min_channels >= 1")
        if self.mode not in ("geometry", "color"):
            raise DecoderConfigError(f"unknown decoder mode {self.mode!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def _stage_plan(config):
    """Per-stage (in_channels, out_channels) pairs plus the pre-crop size."""
    size = 2
    stages = []
    channels = config.base_channels
    while size < max(config.width, config.height, 2):
        out = max(channels // 2, config.min_channels)
        stages.append((channels + 2, out))  # +2 for the appended coord grids
        channels = out
        size *= 2
    return stages, size, channels


def parameter_shapes(config):
    """Ordered (name, shape) list; shapes are a pure function of the config."""
    config.validate()
    stages, _, last = _stage_plan(config)
    shapes = [("fc_w", (4 * config.base_channels, 3)), ("fc_b", (4 * config.base_channels,))]
    for idx, (cin, cout) in enumerate(stages):
        shapes.append((f"conv{idx}_w", (cout, cin, 3, 3)))
        shapes.append((f"conv{idx}_b", (cout,)))
    shapes.append(("final_w", (3, last + 2, 3, 3)))
    shapes.append(("final_b", (3,)))
    return shapes


def parameter_count(config):
    return sum(int(np.prod(shape)) for _, shape in parameter_shapes(config))


def init_decoder(config):
    """He-style scaled uniform weights (bound sqrt(6/fan_in)), zero biases."""
    config.validate()
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    weights = {}
    for name, shape in parameter_shapes(config):
        if name.endswith("_b"):
            weights[name] = T.parameter(np.zeros(shape, np.float32))
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        weights[name] = T.parameter(rng.uniform(-bound, bound, size=shape).astype(np.float32))
    return weights


_coord_grids = {}


def _coord_channels(size, batch):
    """Constant [-1, 1] pixel-position channels at the given square size."""
    if size not in _coord_grids:
        line = np.linspace(-1.0, 1.0, size, dtype=np.float32)
        gx = np.broadcast_to(line[None, :], (size, size))
        gy = np.broadcast_to(line[:, None], (size, size))
        _coord_grids[size] = np.ascontiguousarray(np.stack([gx, gy]))
    grid = _coord_grids[size]
    if batch is not None:
        grid = np.broadcast_to(grid[None], (batch,) + grid.shape)
    return T.Tensor(np.ascontiguousarray(grid))


def decode_batch(weights, config, coords):
    """Decode N coordinates at once; returns a (N, 3, H, W) tensor."""
    coords = np.asarray(coords, np.float32)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise DecoderConfigError(f"coords must be (N, 3), got {coords.shape}")
    n = coords.shape[0]
    stages, size, _ = _stage_plan(config)
    x = T.fully_connected(T.Tensor(coords), weights["fc_w"], weights["fc_b"])
    x = T.reshape(x, (n, config.base_channels, 2, 2))
    x = T.concat_channels([x, _coord_channels(2, n)])
    res = 2
    for idx in range(len(stages)):
        x = T.upsample_nearest_x2(x)
        res *= 2
        x = T.conv2d_same(x, weights[f"conv{idx}_w"], weights[f"conv{idx}_b"])
        x = T.leaky_relu(x, config.alpha)
        x = T.concat_channels([x, _coord_channels(res, n)])
    x = T.conv2d_same(x, weights["final_w"], weights["final_b"])
    x = T.sigmoid(x)
    return T.center_crop(x, config.height, config.width)


def decode(weights, config, x):
    """Decode one LF coordinate into a (3, H, W) map."""
    out = decode_batch(weights, config, np.array([x.as_tuple()], np.float32))
    return T.reshape(out, (3, config.height, config.width))


# ---------------------------------------------------------------------------
# checkpoint helpers (format shared with the trainer)


def config_to_json(config):
    return json.dumps(config.to_dict(), sort_keys=True)


def config_from_json(text):
    return DecoderConfig.from_dict(json.loads(text))
