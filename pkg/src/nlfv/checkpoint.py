"""Weight persistence: magic header, JSON manifest line, raw float32 blobs.

Layout: the bytes "NLFV1\n", one line of JSON holding the decoder config and
the ordered (name, shape) parameter list, then each parameter's raw
little-endian float32 data concatenated in manifest order.  Round trips are
bit-exact; optimizer state is deliberately not persisted, so training resumed
from a checkpoint restarts Adam's moments at zero.
"""

import json

import numpy as np

from . import decoder as dec
from . import tensor as T

MAGIC = b"NLFV1\n"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, weights, config):
    names = [name for name, _ in dec.parameter_shapes(config)]
    manifest = {
        "config": config.to_dict(),
        "params": [[name, list(weights[name].data.shape)] for name in names],
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for name in names:
            blob = np.ascontiguousarray(weights[name].data, dtype="<f4")
            f.write(blob.tobytes())


def load_checkpoint(path):
    """Returns (weights, DecoderConfig)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from None
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_end = raw.find(b"\n", len(MAGIC))
    if header_end < 0:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[len(MAGIC) : header_end])
        config = dec.DecoderConfig.from_dict(manifest["config"])
        params = manifest["params"]
    except (json.JSONDecodeError, KeyError, TypeError, dec.DecoderConfigError) as e:
        raise CheckpointError(f"{path}: malformed manifest: {e}") from None
    expected = {name: tuple(shape) for name, shape in dec.parameter_shapes(config)}
    weights = {}
    offset = header_end + 1
    for name, shape in params:
        shape = tuple(shape)
        if expected.get(name) != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {shape}, "
                                  f"config implies {expected.get(name)}")
        count = int(np.prod(shape))
        blob = raw[offset : offset + 4 * count]
        if len(blob) != 4 * count:
            raise CheckpointError(f"{path}: truncated data for parameter {name}")
        weights[name] = T.parameter(np.frombuffer(blob, "<f4").reshape(shape).copy())
        offset += 4 * count
    missing = set(expected) - set(weights)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    return weights, config
