"""Two-stage training and evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from . import dsp
from . import enhancer as enh_mod
from .beamformer import AFaSNet, BeamformerConfig, load_arrays
from .checkpoint import Checkpoint, from_model
from .dataset import as_pair, pad_batch
from .enhancer import CLSTM, EnhancerConfig
from .metrics import MetricReport, log_spectral_distance, mse_loss, si_snr, si_snr_loss
from .pipeline import Pipeline

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 4
    epochs: int = 30
    max_steps: int | None = None
    seed: int = 0
    grad_clip: float | None = 5.0
    log_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("learning_rate and batch_size must be positive, epochs non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``snapshot`` holds the state at failure."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class _LossLog:
    def __init__(self, path: str | None):
        self.fh = open(path, "a") if path else None

    def write(self, record: dict) -> None:
        line = json.dumps(record)
        logger.info(line)
        if self.fh:
            self.fh.write(line + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _fit(model, items: list, make_batch, loss_fn, cfg: TrainConfig, stage: str) -> list[float]:
    """Shared Adam loop. ``make_batch(list_of_items) -> tensors`` and
    ``loss_fn(model, tensors) -> scalar`` define the stage."""
    if not items:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    log = _LossLog(cfg.log_path)
    history: list[float] = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            model.train()
            order = rng.permutation(len(items))
            epoch_losses = []
            t0 = time.time()
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = make_batch([items[i] for i in order[start : start + cfg.batch_size]])
                loss = loss_fn(model, batch)
                value = float(loss.detach())
                if not math.isfinite(value):
                    snapshot = {
                        "stage": stage,
                        "epoch": epoch,
                        "step": step,
                        "loss": value,
                        "recent_losses": history[-10:],
                        "param_norms": {n: float(p.detach().norm()) for n, p in model.named_parameters()},
                    }
                    raise TrainingDiverged(f"{stage}: non-finite loss at step {step}", snapshot)
                opt.zero_grad()
                loss.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                history.append(value)
                epoch_losses.append(value)
                step += 1
            if epoch_losses:
                log.write(
                    {
                        "stage": stage,
                        "epoch": epoch,
                        "step": step,
                        "loss": float(np.mean(epoch_losses)),
                        "seconds": round(time.time() - t0, 3),
                    }
                )
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        log.close()
    model.eval()
    return history


def _init_model(model, init: Checkpoint | None):
    if init is not None:
        load_arrays(model, init.tensors)
    return model


def train_beamformer(
    dataset, cfg: TrainConfig, model_cfg: BeamformerConfig, init: Checkpoint | None = None
) -> Checkpoint:
    """Minimise negative SI-SNR against the direct-path target.

    Batches are zero-padded to their longest member and the padded samples
    are masked out of the loss.
    """
    torch.manual_seed(cfg.seed)
    model = _init_model(AFaSNet(model_cfg), init)
    items = [as_pair(it) for it in dataset]

    def make_batch(pairs):
        mix, lengths = pad_batch([np.asarray(m, dtype=np.float32) for m, _ in pairs])
        tgt, _ = pad_batch([np.asarray(t, dtype=np.float32) for _, t in pairs])
        return torch.from_numpy(mix), torch.from_numpy(tgt), torch.from_numpy(lengths)

    def loss_fn(model, batch):
        mix, tgt, lengths = batch
        return si_snr_loss(model(mix), tgt, lengths)

    history = _fit(model, items, make_batch, loss_fn, cfg, "beamformer")
    return from_model("beamformer", model, {"train": cfg.to_dict(), "loss_history": history})


def enhancer_features(mixture, target, pipeline: Pipeline, cfg: EnhancerConfig):
    """(log|Z|, R) for one pair, Z being the level-matched beamformer output."""
    z = pipeline.beamform(mixture)
    spec_z = enh_mod.analyze(z, cfg)
    spec_x = enh_mod.analyze(np.asarray(target, dtype=np.float64), cfg)
    logmag = dsp.log_magnitude(spec_z, cfg.mag_floor)
    residual = enh_mod.residual_target(spec_x, spec_z, cfg.mag_floor)
    return logmag.astype(np.float32), residual.astype(np.float32)


def train_enhancer(
    dataset, cfg: TrainConfig, model_cfg: EnhancerConfig, beamformer, init: Checkpoint | None = None
) -> Checkpoint:
    """Fit the CLSTM to residual targets built from beamformed mixtures.

    ``beamformer`` is a checkpoint, a built model or a callable.
    """
    pipeline = Pipeline(beamformer)
    items = []
    for it in dataset:
        mixture, target = as_pair(it)
        items.append(enhancer_features(mixture, target, pipeline, model_cfg))
    torch.manual_seed(cfg.seed)
    model = _init_model(CLSTM(model_cfg), init)

    def make_batch(pairs):
        # pad along frames: (N, K) -> (K, N) for pad_batch, then back
        x, lengths = pad_batch([p[0].T for p in pairs])
        r, _ = pad_batch([p[1].T for p in pairs])
        mask = (np.arange(x.shape[-1])[None] < lengths[:, None]).astype(np.float32)
        return (
            torch.from_numpy(x.transpose(0, 2, 1).copy()),
            torch.from_numpy(r.transpose(0, 2, 1).copy()),
            torch.from_numpy(mask[:, :, None]),
        )

    def loss_fn(model, batch):
        x, r, mask = batch
        return mse_loss(model(x), r, mask)

    history = _fit(model, items, make_batch, loss_fn, cfg, "enhancer")
    return from_model("enhancer", model, {"train": cfg.to_dict(), "loss_history": history})


def evaluate(dataset, beamformer, enhancer=None, reference_channel: int = 0) -> MetricReport:
    """SI-SNR and LSD for the mixture's reference channel and every stage output."""
    pipeline = Pipeline(beamformer, enhancer, reference_channel)
    report = MetricReport()
    for i, item in enumerate(dataset):
        mixture, target = as_pair(item)
        name = item.meta.get("id", str(i)) if hasattr(item, "meta") else str(i)
        if target is None:
            logger.warning("example %s has no reference; skipped", name)
            report.skipped.append(name)
            continue
        mixture = np.asarray(mixture, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        stages = pipeline(mixture)
        row = {"id": name}
        for stage, wave in [("in", mixture[reference_channel])] + list(stages.items()):
            row[f"si_snr_{stage}"] = si_snr(wave, target)
            row[f"lsd_{stage}"] = log_spectral_distance(wave, target)
        report.rows.append(row)
    return report
