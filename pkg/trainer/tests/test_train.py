import math

import numpy as np
import pytest
import torch

from toytrainer.config import ArchConfig, TrainConfig
from toytrainer.data import load_split
from toytrainer.model import QatTransformer
from toytrainer.train import (TrainingDiverged, evaluate, predict,
                              refresh_bn_stats, train)


def test_quick_run_learns(quick_run):
    cfg, res = quick_run
    assert len(res.history) == cfg.epochs
    assert res.history[-1].mean_loss < res.history[0].mean_loss
    assert res.val_accuracy > 0.9
    assert res.train_accuracy > 0.9
    assert res.seconds > 0


def test_training_is_reproducible():
    cfg = TrainConfig(epochs=1, seed=123, arch=ArchConfig(channels=(8, 16), heads=2))
    a = train(cfg)
    b = train(cfg)
    assert a.val_accuracy == b.val_accuracy
    wa = a.model.stages[0].conv.weight.detach().numpy()
    wb = b.model.stages[0].conv.weight.detach().numpy()
    assert np.array_equal(wa, wb)
    sa = a.model.quantizers()["blk1.att.score"].step.item()
    sb = b.model.quantizers()["blk1.att.score"].step.item()
    assert sa == sb


def test_divergence_aborts_with_diagnostics():
    cfg = TrainConfig(epochs=1, seed=0, arch=ArchConfig(channels=(8, 16), heads=2))
    torch.manual_seed(0)
    model = QatTransformer(cfg.arch, cfg.quant_levels)
    with torch.no_grad():
        model.head.weight[0, 0] = float("nan")
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(cfg, model=model)


def test_refresh_bn_stats_pins_dataset_statistics():
    torch.manual_seed(1)
    model = QatTransformer(ArchConfig(channels=(8, 16), heads=2), 4)
    rng = np.random.default_rng(2)
    x = rng.random((64, 1, 8, 8), dtype=np.float32)
    # one pass, one batch holding the full set: running stats must equal
    # that batch's statistics at the current weights
    refresh_bn_stats(model, x, batch_size=64, passes=1)
    with torch.no_grad():
        c = model.stages[0].conv(torch.from_numpy(x))
    want_mean = c.mean(dim=(0, 2, 3))
    want_var = c.var(dim=(0, 2, 3), unbiased=True)
    bn = model.stages[0].bn
    assert torch.allclose(bn.running_mean, want_mean, atol=1e-6)
    assert torch.allclose(bn.running_var, want_var, atol=1e-6)
    assert not model.training


def test_predict_and_evaluate_agree():
    torch.manual_seed(3)
    model = QatTransformer(ArchConfig(channels=(8, 16), heads=2), 4)
    split = load_split(seed=0)
    x = split.val_x[:40]
    preds = predict(model, x, batch_size=16)
    assert preds.shape == (40,)
    assert evaluate(model, x, preds) == 1.0


def test_cosine_schedule_decays_lr(quick_run):
    cfg, res = quick_run
    assert cfg.lr_schedule == "cosine"
    lrs = [h.lr for h in res.history]
    assert lrs == sorted(lrs, reverse=True)
    assert lrs[-1] < cfg.lr * 0.2
