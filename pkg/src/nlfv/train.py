"""Per-scene training loop: reconstruct every observed view from its neighbors.

Each step picks one observed coordinate, rebuilds it through the differentiable
pipeline with the observation itself excluded, and takes an Adam step on an L1
photometric loss.  Two loss terms: the spatial reconstruction, and (for video)
the temporal path that warps adjacent-frame reconstructions onto the target
frame.  Held-out views are invisible to this module by construction and the
set of images actually read is recorded to prove it.
"""

import csv
import dataclasses
import time

import numpy as np

from . import decoder as dec
from . import pipeline as P
from . import tensor as T
from .checkpoint import save_checkpoint


class TrainError(Exception):
    pass


@dataclasses.dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    lambda_spatial: float = 1.0
    lambda_full: float = 1.0
    temporal: bool = True
    kappa: float = P.DEFAULT_KAPPA
    seed: int = 0
    checkpoint_every: int = 0  # epochs between periodic saves; 0 = final only
    checkpoint_path: str = None
    log_path: str = None

    def validate(self):
        if self.learning_rate <= 0:
            raise TrainError("learning rate must be > 0")
        if self.lambda_spatial <= 0 and self.lambda_full <= 0:
            raise TrainError("at least one loss weight must be > 0")
        if self.epochs < 0:
            raise TrainError("epochs must be >= 0")
        return self


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_spatial: float
    loss_full: float
    seconds: float


@dataclasses.dataclass
class TrainLog:
    records: list = dataclasses.field(default_factory=list)
    touched: set = dataclasses.field(default_factory=set)
    final_holdout_mse: float = None

    def losses(self):
        return [r.loss_total for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss_total", "loss_spatial", "loss_full", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.loss_total:.8f}", f"{r.loss_spatial:.8f}",
                            f"{r.loss_full:.8f}", f"{r.seconds:.4f}"])


def loss(pred, target):
    """Mean absolute per-pixel difference as a taped scalar."""
    return T.reduce_mean_abs(T.subtract(pred, target))


class _RecordingDataset:
    """Delegating wrapper that logs which view images training actually reads."""

    def __init__(self, dataset, touched):
        self._dataset = dataset
        self._touched = touched

    def view_image(self, i, j, k):
        img = self._dataset.view_image(i, j, k)
        self._touched.add((i, j, k))
        return img

    def __getattr__(self, name):
        return getattr(self._dataset, name)


def _temporal_sources(dataset, k):
    """Nearest observed frame on each side of k; frames whose views are all
    held out are skipped, so holding out a whole frame still trains."""
    observed = {idx[2] for idx in dataset.train_indices()}
    below = [kk for kk in observed if kk < k]
    above = [kk for kk in observed if kk > k]
    sources = []
    if below:
        sources.append(max(below))
    if above:
        sources.append(min(above))
    return sources


def train(dataset, decoder_config, train_config):
    """Optimize decoder weights on the dataset; returns (weights, TrainLog)."""
    train_config.validate()
    decoder_config.validate()
    if (decoder_config.width, decoder_config.height) != (dataset.width, dataset.height):
        raise TrainError(
            f"decoder resolution {decoder_config.width}x{decoder_config.height} "
            f"does not match dataset {dataset.width}x{dataset.height}"
        )
    train_indices = dataset.train_indices()
    if not train_indices:
        raise TrainError("empty training set")
    frames_seen = {idx[2] for idx in train_indices}
    for k in frames_seen:
        if len(dataset.views_at_frame(k)) < 2:
            raise TrainError(f"frame {k} has fewer than 2 observed views")

    log = TrainLog()
    recording = _RecordingDataset(dataset, log.touched)
    weights = dec.init_decoder(decoder_config)
    opt = T.Adam(weights, lr=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    use_temporal = (
        train_config.temporal and dataset.frames > 1 and train_config.lambda_full > 0
        and decoder_config.mode != "color"
    )

    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        order = [train_indices[i] for i in rng.permutation(len(train_indices))]
        sum_total = sum_spatial = sum_full = 0.0
        for idx in order:
            x = dataset.coordinate_of(*idx)
            target = T.Tensor(recording.view_image(*idx))
            with T.Graph() as g:
                provider = P.decoder_provider(weights, decoder_config)
                terms = []
                spatial_val = full_val = 0.0
                if decoder_config.mode == "color":
                    # direct regression ablation: no warping, no neighbors
                    term = loss(dec.decode(weights, decoder_config, x), target)
                    spatial_val = term.item()
                    terms.append(term)
                elif train_config.lambda_spatial > 0:
                    recon = P.interpolate_spatial(
                        provider, recording, x, exclude_self=True, kappa=train_config.kappa
                    )
                    term = loss(recon, target)
                    spatial_val = term.item()
                    terms.append(T.scale(term, train_config.lambda_spatial))
                if use_temporal:
                    sources = _temporal_sources(dataset, idx[2])
                    if sources:
                        full = P.temporal_combine(
                            provider, recording, x, sources, exclude_self=True,
                            kappa=train_config.kappa,
                        )
                        term = loss(full, target)
                        full_val = term.item()
                        terms.append(T.scale(term, train_config.lambda_full))
                if not terms:
                    raise TrainError("loss has no active terms for this dataset")
                total = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
            total_val = total.item()
            if not np.isfinite(total_val):
                raise TrainError(f"non-finite loss at epoch {epoch} coordinate {idx}")
            try:
                T.backward(total, g)
            except T.NumericError as e:
                raise TrainError(f"epoch {epoch} coordinate {idx}: {e}") from None
            opt.step()
            sum_total += total_val
            sum_spatial += spatial_val
            sum_full += full_val
        n = len(order)
        log.records.append(EpochRecord(
            epoch=epoch,
            loss_total=sum_total / n,
            loss_spatial=sum_spatial / n,
            loss_full=sum_full / n,
            seconds=time.perf_counter() - started,
        ))
        cadence = train_config.checkpoint_every
        if train_config.checkpoint_path and cadence > 0 and (epoch + 1) % cadence == 0:
            save_checkpoint(train_config.checkpoint_path, weights, decoder_config)

    overlap = log.touched & set(dataset.holdout)
    if overlap:
        raise TrainError(f"holdout isolation violated: touched {sorted(overlap)}")

    if dataset.holdout:
        total = 0.0
        eval_mode = "no_warp" if decoder_config.mode == "color" else "full"
        for idx in sorted(dataset.holdout):
            out = P.render(weights, decoder_config, dataset, dataset.coordinate_of(*idx),
                           mode=eval_mode, kappa=train_config.kappa)
            ref = dataset.reference_image(*idx)
            total += float(np.mean((out.astype(np.float64) - ref) ** 2))
        log.final_holdout_mse = total / len(dataset.holdout)

    if train_config.checkpoint_path:
        save_checkpoint(train_config.checkpoint_path, weights, decoder_config)
    if train_config.log_path:
        log.write_csv(train_config.log_path)
    return weights, log
