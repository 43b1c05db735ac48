"""Light field video datasets: coordinate model, PPM image I/O, manifests, holdout splits.

Images are numpy arrays shaped (3, H, W), float32, values in [0, 1].  A dataset
holds one image per observed grid index (i, j, k) where i, j walk the view grid
and k walks frames.  Grid indices map to normalized coordinates in [0, 1]^3 by
i/(m-1) per axis; an axis with a single sample maps to 0.5.
"""

import dataclasses
import json
import os

import numpy as np


class DatasetError(Exception):
    pass


class HoldoutError(DatasetError):
    """Raised when training-path code touches a held-out view."""


@dataclasses.dataclass(frozen=True)
class LFCoordinate:
    """A light field coordinate: two view axes and time, each normalized to [0,1]."""

    u: float
    v: float
    t: float

    def __post_init__(self):
        for name in ("u", "v", "t"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise DatasetError(f"coordinate {name}={val} outside [0,1]")

    def as_tuple(self):
        return (self.u, self.v, self.t)


def _axis_coord(i, count):
    if count == 1:
        return 0.5
    return i / (count - 1)


@dataclasses.dataclass
class LightFieldDataset:
    grid_m: int
    grid_n: int
    frames: int
    width: int
    height: int
    images: dict  # (i, j, k) -> float32 array (3, H, W)
    disparity_scale: float
    flow_scale: float
    holdout: frozenset = frozenset()

    def validate(self):
        if self.grid_m < 1 or self.grid_n < 1 or self.frames < 1:
            raise DatasetError("grid and frame counts must be positive")
        if self.disparity_scale <= 0:
            raise DatasetError("disparity_scale must be > 0")
        if self.flow_scale < 0:
            raise DatasetError("flow_scale must be >= 0")
        for idx, img in self.images.items():
            if img.shape != (3, self.height, self.width):
                raise DatasetError(
                    f"view {idx}: shape {img.shape} does not match "
                    f"(3, {self.height}, {self.width})"
                )
            if img.dtype != np.float32:
                raise DatasetError(f"view {idx}: dtype {img.dtype} is not float32")
            if img.min() < 0.0 or img.max() > 1.0:
                raise DatasetError(f"view {idx}: values outside [0,1]")
        for idx in self.holdout:
            if idx not in self.images:
                raise DatasetError(f"holdout index {idx} has no observation")
        return self

    def coordinate_of(self, i, j, k):
        if not (0 <= i < self.grid_m and 0 <= j < self.grid_n and 0 <= k < self.frames):
            raise DatasetError(f"grid index ({i},{j},{k}) out of range")
        return LFCoordinate(
            _axis_coord(i, self.grid_m), _axis_coord(j, self.grid_n), _axis_coord(k, self.frames)
        )

    def index_of(self, coord):
        """Inverse of coordinate_of; errors if coord is not exactly on the grid."""
        out = []
        for val, count in ((coord.u, self.grid_m), (coord.v, self.grid_n), (coord.t, self.frames)):
            if count == 1:
                out.append(0)
                continue
            i = int(round(val * (count - 1)))
            if _axis_coord(i, count) != val:
                raise DatasetError(f"coordinate {coord} is not on the sample grid")
            out.append(i)
        return tuple(out)

    def all_indices(self):
        return sorted(self.images.keys())

    def train_indices(self):
        return [idx for idx in self.all_indices() if idx not in self.holdout]

    def views_at_frame(self, k, include_holdout=False):
        out = [idx for idx in self.all_indices() if idx[2] == k]
        if not include_holdout:
            out = [idx for idx in out if idx not in self.holdout]
        return out

    def view_image(self, i, j, k):
        """Training-side accessor: refuses held-out views."""
        idx = (i, j, k)
        if idx in self.holdout:
            raise HoldoutError(f"view {idx} is held out")
        if idx not in self.images:
            raise DatasetError(f"no observation at grid index {idx}")
        return self.images[idx]

    def reference_image(self, i, j, k):
        """Evaluation-side accessor: returns any observed view, held out or not."""
        idx = (i, j, k)
        if idx not in self.images:
            raise DatasetError(f"no observation at grid index {idx}")
        return self.images[idx]

    def with_holdout(self, holdout):
        return dataclasses.replace(self, holdout=frozenset(tuple(h) for h in holdout))


# ---------------------------------------------------------------------------
# PPM (P6) image files


def write_ppm(path, image):
    """Write a (3, H, W) float image in [0,1] as binary PPM, maxval 255."""
    c, h, w = image.shape
    if c != 3:
        raise DatasetError(f"PPM write needs 3 channels, got {c}")
    quantized = np.clip(np.rint(np.asarray(image, np.float64) * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.ascontiguousarray(quantized.transpose(1, 2, 0))
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(interleaved.tobytes())


def encode_ppm(image):
    """PPM bytes for a (3, H, W) float image, identical to write_ppm output."""
    c, h, w = image.shape
    if c != 3:
        raise DatasetError(f"PPM encode needs 3 channels, got {c}")
    quantized = np.clip(np.rint(np.asarray(image, np.float64) * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.ascontiguousarray(quantized.transpose(1, 2, 0))
    return b"P6\n%d %d\n255\n" % (w, h) + interleaved.tobytes()


def _read_ppm_tokens(raw, path, count):
    """Pull header tokens off raw bytes, skipping whitespace and # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(raw):
            raise DatasetError(f"{path}: truncated PPM header")
        ch = raw[pos : pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            nl = raw.find(b"\n", pos)
            if nl < 0:
                raise DatasetError(f"{path}: unterminated comment in PPM header")
            pos = nl + 1
        else:
            end = pos
            while end < len(raw) and raw[end : end + 1] not in b" \t\r\n":
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos + 1  # consume the single whitespace after the last token


def read_ppm(path):
    """Read a binary PPM into a (3, H, W) float32 array in [0,1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P6"):
        raise DatasetError(f"{path}: not a binary PPM (missing P6 magic)")
    tokens, data_start = _read_ppm_tokens(raw, path, 4)
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise DatasetError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DatasetError(f"{path}: unsupported PPM maxval {maxval}")
    data = raw[data_start : data_start + w * h * 3]
    if len(data) != w * h * 3:
        raise DatasetError(f"{path}: PPM payload truncated")
    pixels = np.frombuffer(data, np.uint8).reshape(h, w, 3)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / 255.0).copy()


# ---------------------------------------------------------------------------
# dataset directories: manifest.json + one PPM per view


def _view_filename(i, j, k):
    return f"v_{i}_{j}_{k}.ppm"


def save_dataset(dataset, out_dir):
    dataset.validate()
    os.makedirs(out_dir, exist_ok=True)
    views = []
    for (i, j, k) in dataset.all_indices():
        name = _view_filename(i, j, k)
        write_ppm(os.path.join(out_dir, name), dataset.images[(i, j, k)])
        views.append({"index": [i, j, k], "file": name})
    manifest = {
        "grid": [dataset.grid_m, dataset.grid_n],
        "frames": dataset.frames,
        "size": [dataset.width, dataset.height],
        "disparity_scale": dataset.disparity_scale,
        "flow_scale": dataset.flow_scale,
        "views": views,
        "holdout": [list(idx) for idx in sorted(dataset.holdout)],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load_dataset(manifest_path):
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise DatasetError(f"cannot read manifest: {e}") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"{manifest_path}: malformed manifest: {e}") from None
    base = os.path.dirname(manifest_path)
    try:
        m, n = manifest["grid"]
        frames = manifest["frames"]
        w, h = manifest["size"]
        views = manifest["views"]
    except (KeyError, ValueError, TypeError) as e:
        raise DatasetError(f"{manifest_path}: manifest missing field: {e}") from None
    images = {}
    for entry in views:
        i, j, k = entry["index"]
        path = os.path.join(base, entry["file"])
        if not os.path.exists(path):
            raise DatasetError(f"missing view file {path}")
        img = read_ppm(path)
        if img.shape != (3, h, w):
            raise DatasetError(f"{path}: size {img.shape[2]}x{img.shape[1]}, expected {w}x{h}")
        images[(i, j, k)] = img
    dataset = LightFieldDataset(
        grid_m=m,
        grid_n=n,
        frames=frames,
        width=w,
        height=h,
        images=images,
        disparity_scale=float(manifest["disparity_scale"]),
        flow_scale=float(manifest["flow_scale"]),
        holdout=frozenset(tuple(idx) for idx in manifest.get("holdout", [])),
    )
    return dataset.validate()


def mark_holdout(data_dir, holdout):
    """Record a holdout set in an existing dataset directory's manifest so later
    runs (evaluation in particular) see the same split. View files are untouched."""
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot update manifest {path}: {e}") from None
    manifest["holdout"] = [list(idx) for idx in sorted(holdout)]
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# holdout splitting


def holdout_split(dataset, pattern, explicit=None):
    """Partition observations into (training indices, holdout set).

    Patterns: "center-view" holds out the middle view at every frame,
    "center-frame" holds out every view at the middle frame, "explicit" takes
    a list of (i, j, k) indices.
    """
    if pattern == "center-view":
        ci, cj = dataset.grid_m // 2, dataset.grid_n // 2
        holdout = {(ci, cj, k) for k in range(dataset.frames) if (ci, cj, k) in dataset.images}
    elif pattern == "center-frame":
        ck = dataset.frames // 2
        holdout = {idx for idx in dataset.images if idx[2] == ck}
    elif pattern == "explicit":
        holdout = {tuple(idx) for idx in (explicit or [])}
        for idx in holdout:
            if idx not in dataset.images:
                raise DatasetError(f"explicit holdout index {idx} has no observation")
    else:
        raise DatasetError(f"unknown holdout pattern {pattern!r}")
    train = [idx for idx in dataset.all_indices() if idx not in holdout]
    if not train:
        raise DatasetError("holdout would remove every observation")
    return train, frozenset(holdout)
