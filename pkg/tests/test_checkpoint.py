import numpy as np
import pytest

from nlfv import checkpoint as C
from nlfv import decoder as dec
from nlfv import pipeline as P
from nlfv import synthetic as S
from nlfv import tensor as T
from nlfv.data import LFCoordinate


def small_config(**kw):
    args = dict(width=16, height=16, base_channels=16, min_channels=4, seed=3)
    args.update(kw)
    return dec.DecoderConfig(**args).validate()


def test_round_trip_bit_exact(tmp_path):
    config = small_config()
    weights = dec.init_decoder(config)
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, weights, config)
    loaded, loaded_config = C.load_checkpoint(path)
    assert loaded_config == config
    assert set(loaded) == set(weights)
    for name in weights:
        assert np.array_equal(loaded[name].data, weights[name].data)
    # re-saving the loaded weights produces identical bytes
    path2 = tmp_path / "w2.ckpt"
    C.save_checkpoint(path2, loaded, loaded_config)
    assert path.read_bytes() == path2.read_bytes()


def test_magic_header(tmp_path):
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, dec.init_decoder(small_config()), small_config())
    assert path.read_bytes().startswith(b"NLFV1\n")


def test_render_after_round_trip_identical(tmp_path):
    spec = S.SceneSpec(
        width=16, height=16, grid_m=3, grid_n=3, frames=1,
        disparity_scale=4.0, flow_scale=0.0,
        layers=(S.LayerSpec(0.3, (0.0, 0.0), "noise", seed=1),), seed=4,
    ).validate()
    ds = S.generate_synthetic(spec)
    config = small_config()
    weights = dec.init_decoder(config)
    x = LFCoordinate(0.3, 0.6, 0.5)
    before = P.render(weights, config, ds, x)
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, weights, config)
    loaded, loaded_config = C.load_checkpoint(path)
    after = P.render(loaded, loaded_config, ds, x)
    assert np.array_equal(before, after)


def test_loaded_weights_have_fresh_optimizer_state(tmp_path):
    config = small_config()
    weights = dec.init_decoder(config)
    weights["fc_w"].grad = np.ones_like(weights["fc_w"].data)
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, weights, config)
    loaded, _ = C.load_checkpoint(path)
    assert all(w.grad is None for w in loaded.values())
    opt = T.Adam(loaded)
    assert opt.step_count == 0


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"PKZIP....")
    with pytest.raises(C.CheckpointError):
        C.load_checkpoint(path)


def test_truncated_blob(tmp_path):
    config = small_config()
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, dec.init_decoder(config), config)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(C.CheckpointError) as exc:
        C.load_checkpoint(path)
    assert "truncated" in str(exc.value)


def test_manifest_shape_mismatch(tmp_path):
    config = small_config()
    path = tmp_path / "w.ckpt"
    C.save_checkpoint(path, dec.init_decoder(config), config)
    raw = path.read_bytes()
    tampered = raw.replace(b'["fc_b", [64]]', b'["fc_b", [65]]', 1)
    assert tampered != raw
    path.write_bytes(tampered)
    with pytest.raises(C.CheckpointError):
        C.load_checkpoint(path)


def test_missing_file():
    with pytest.raises(C.CheckpointError):
        C.load_checkpoint("/nonexistent/w.ckpt")
