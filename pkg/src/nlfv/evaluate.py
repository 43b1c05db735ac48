"""Metrics and evaluation protocol: holdout comparison, sparsity sweep, bench.

Reports note explicitly that the perceptual (VGG) metric is dropped; L2 and
DSSIM are computed from scratch here.  All metrics treat images as float arrays
in [0, 1] shaped (3, H, W).
"""

import csv
import dataclasses
import json
import time

import numpy as np

from . import pipeline as P
from . import synthetic as S
from . import train as TR
from .data import LFCoordinate, holdout_split

REPORT_NOTE = "metrics: L2 (mse) and DSSIM; perceptual VGG metric dropped"

PSNR_CAP = 99.0


class EvalError(Exception):
    pass


def mse(a, b):
    return float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))


def psnr(a, b):
    value = mse(a, b)
    if value <= 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / value)))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    xs = np.arange(size) - half
    w = np.exp(-(xs**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(img, window):
    """Separable 2D correlation with 'valid' extent on the trailing axes."""
    out = np.apply_along_axis(lambda row: np.convolve(row, window, mode="valid"), -1, img)
    return np.apply_along_axis(lambda col: np.convolve(col, window, mode="valid"), -2, out)


def ssim(a, b, window_size=11, sigma=1.5):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise EvalError(f"image shapes differ: {a.shape} vs {b.shape}")
    size = min(window_size, a.shape[-1], a.shape[-2])
    if size % 2 == 0:
        size -= 1
    if size < 3:
        raise EvalError("images too small for SSIM window")
    w = _gaussian_window(size, sigma)
    c1, c2 = 0.01**2, 0.03**2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def dssim(a, b):
    return (1.0 - ssim(a, b)) / 2.0


# ---------------------------------------------------------------------------
# holdout evaluation


@dataclasses.dataclass(frozen=True)
class EvalRow:
    method: str
    index: tuple
    mse: float
    dssim: float


@dataclasses.dataclass
class EvalReport:
    note: str
    rows: list

    def summary(self):
        methods = {}
        for row in self.rows:
            methods.setdefault(row.method, []).append(row)
        return {
            m: {
                "mean_mse": float(np.mean([r.mse for r in rows])),
                "mean_dssim": float(np.mean([r.dssim for r in rows])),
                "count": len(rows),
            }
            for m, rows in sorted(methods.items())
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["# " + self.note])
            w.writerow(["method", "i", "j", "k", "mse", "dssim"])
            for r in self.rows:
                w.writerow([r.method, *r.index, repr(r.mse), repr(r.dssim)])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as f:
            reader = csv.reader(f)
            note_row = next(reader)
            next(reader)  # column header
            rows = [
                EvalRow(m, (int(i), int(j), int(k)), float(e), float(d))
                for m, i, j, k, e, d in reader
            ]
        return cls(note=note_row[0].lstrip("# "), rows=rows)

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump({"note": self.note, "summary": self.summary()}, f, indent=1)
            f.write("\n")


NEEDS_DECODER = ("full", "no_occlusion", "no_warp", "down_up")


def evaluate_holdout(dataset, methods, weights=None, config=None,
                     kappa=P.DEFAULT_KAPPA, down_factor=8):
    """Render every held-out coordinate with every method, against the withheld
    observation.  Methods needing trained weights error out if none are given."""
    if not dataset.holdout:
        raise EvalError("dataset has no holdout to evaluate")
    rows = []
    for method in methods:
        if method in NEEDS_DECODER and weights is None:
            raise EvalError(f"method {method!r} requires trained weights")
        for idx in sorted(dataset.holdout):
            x = dataset.coordinate_of(*idx)
            out = P.render(weights, config, dataset, x, mode=method, kappa=kappa,
                           down_factor=down_factor)
            ref = dataset.reference_image(*idx)
            rows.append(EvalRow(method, idx, mse(out, ref), dssim(out, ref)))
    return EvalReport(note=REPORT_NOTE, rows=rows)


# ---------------------------------------------------------------------------
# sparsity sweep


def sparsity_sweep(scene_spec, grids, decoder_config, train_config):
    """Regenerate, train, and evaluate the held-out center view per grid density."""
    results = []
    for grid in grids:
        m, n = grid
        spec = dataclasses.replace(scene_spec, grid_m=m, grid_n=n).validate()
        ds = S.generate_synthetic(spec)
        _, holdout = holdout_split(ds, "center-view")
        ds = ds.with_holdout(holdout)
        weights, _ = TR.train(ds, decoder_config, dataclasses.replace(train_config))
        report = evaluate_holdout(ds, ["full"], weights, decoder_config,
                                  kappa=train_config.kappa)
        summary = report.summary()["full"]
        results.append({
            "grid": f"{m}x{n}",
            "mse": summary["mean_mse"],
            "dssim": summary["mean_dssim"],
        })
    return results


# ---------------------------------------------------------------------------
# render benchmarking


def bench_render(weights, config, dataset, n, seed=0, kappa=P.DEFAULT_KAPPA):
    """Time n full renders at random coordinates with a decode/warp breakdown.

    The decode component counts geometry-decoder forwards; the warp component
    counts image/depth warps plus occlusion weighting.  Patching the pipeline's
    entry points for the duration makes this single-threaded only.
    """
    if n < 1:
        raise EvalError("bench_render needs n >= 1")
    rng = np.random.default_rng(seed)
    acc = {"decode": 0.0, "warp": 0.0}

    base_provider = P.decoder_provider(weights, config)

    def timed_provider(coords):
        t0 = time.perf_counter()
        out = base_provider(coords)
        acc["decode"] += time.perf_counter() - t0
        return out

    orig_warp, orig_occ = P.warp, P.occlusion_weights

    def timed_warp(image, flow):
        t0 = time.perf_counter()
        out = orig_warp(image, flow)
        acc["warp"] += time.perf_counter() - t0
        return out

    def timed_occ(tgt_z, srcs, kappa=P.DEFAULT_KAPPA):
        t0 = time.perf_counter()
        out = orig_occ(tgt_z, srcs, kappa)
        acc["warp"] += time.perf_counter() - t0
        return out

    totals = []
    P.warp, P.occlusion_weights = timed_warp, timed_occ
    try:
        for _ in range(n):
            x = LFCoordinate(*rng.uniform(0.0, 1.0, size=3))
            t0 = time.perf_counter()
            P.render(weights, config, dataset, x, mode="full", kappa=kappa,
                     provider=timed_provider)
            totals.append(time.perf_counter() - t0)
    finally:
        P.warp, P.occlusion_weights = orig_warp, orig_occ

    totals_ms = np.array(totals) * 1000.0
    total = float(totals_ms.sum())
    return {
        "renders": n,
        "mean_ms": float(totals_ms.mean()),
        "p95_ms": float(np.percentile(totals_ms, 95)),
        "std_ms": float(totals_ms.std()),
        "decode_ms_mean": acc["decode"] * 1000.0 / n,
        "warp_ms_mean": acc["warp"] * 1000.0 / n,
        "breakdown_fraction": (acc["decode"] + acc["warp"]) * 1000.0 / total,
    }
