"""AdamW training loop for the quantization-aware model."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn.modules.batchnorm import _BatchNorm

from .config import TrainConfig
from .data import Split, batches, load_split
from .model import QatTransformer


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; carries where and with what inputs."""


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    model: QatTransformer
    split: Split
    history: list[EpochStats] = field(default_factory=list)
    train_accuracy: float = 0.0
    val_accuracy: float = 0.0
    seconds: float = 0.0


def refresh_bn_stats(model: QatTransformer, x: np.ndarray, batch_size: int,
                     passes: int = 2) -> None:
    """Re-estimate BN running statistics at the final weights.

    During training the running averages trail the weights; early in a run
    the conv variances are both tiny and fast-moving, so the lag can be a
    large relative error and eval-mode accuracy craters. Re-accumulating
    with momentum=None (cumulative average) pins the stats to the finished
    model. Two passes: the second sees inputs shaped by the first pass's
    refresh of earlier layers, tightening the fixed point.
    """
    bns = [m for m in model.modules() if isinstance(m, _BatchNorm)]
    saved = [bn.momentum for bn in bns]
    model.train()
    with torch.no_grad():
        for _ in range(passes):
            for bn in bns:
                bn.reset_running_stats()
                bn.momentum = None
            for lo in range(0, len(x), batch_size):
                model(torch.from_numpy(x[lo:lo + batch_size]))
    for bn, m in zip(bns, saved):
        bn.momentum = m
    model.eval()


def predict(model: QatTransformer, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class predictions for a [n, C, H, W] array, eval mode."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(x), batch_size):
            logits = model(torch.from_numpy(x[lo:lo + batch_size]))
            out.append(logits.argmax(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: QatTransformer, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == y)) if len(x) else 0.0


def train(cfg: TrainConfig, log=None, model: QatTransformer | None = None) -> TrainResult:
    """Run the configured training; returns the model plus accuracies.

    Seeding covers weight init, data order, and the split, so a repeated
    run on the same machine reproduces the result exactly (CPU kernels are
    deterministic at this scale). Passing a model resumes it instead of
    initializing a fresh one.
    """
    started = time.monotonic()
    torch.manual_seed(cfg.seed)
    split = load_split(cfg.val_fraction, cfg.seed)
    if model is None:
        model = QatTransformer(cfg.arch, cfg.quant_levels)

    opt = torch.optim.AdamW(model.param_groups(cfg.weight_decay), lr=cfg.lr)
    steps_per_epoch = math.ceil(len(split.train_x) / cfg.batch_size)
    scheduler = None
    if cfg.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=cfg.epochs * steps_per_epoch
        )
    loss_fn = nn.CrossEntropyLoss()
    order_rng = np.random.default_rng(cfg.seed)

    result = TrainResult(model, split)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses = []
        for step, (bx, by) in enumerate(
            batches(split.train_x, split.train_y, cfg.batch_size, order_rng)
        ):
            logits = model(torch.from_numpy(bx))
            loss = loss_fn(logits, torch.from_numpy(by))
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"loss {loss.item()} at epoch {epoch} step {step} "
                    f"(lr {opt.param_groups[0]['lr']:.3g}, batch {len(bx)})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(float(loss.item()))
        stats = EpochStats(epoch, float(np.mean(losses)), float(opt.param_groups[0]["lr"]))
        result.history.append(stats)
        if log is not None:
            log(stats)

    refresh_bn_stats(model, split.train_x, cfg.batch_size)
    result.train_accuracy = evaluate(model, split.train_x, split.train_y)
    result.val_accuracy = evaluate(model, split.val_x, split.val_y)
    result.seconds = time.monotonic() - started
    return result
