"""End-to-end gate for the training component.

One 20-epoch run on the digits set, exported and then consumed by the
inference engine purely through its CLI and file formats:

  1. validation accuracy of the quantized model >= 90%, measured by the
     engine itself on the exported container;
  2. spiking accuracy within one percentage point of the analog quantized
     accuracy from firing delay 3 up, and exactly equal at delay = window;
  3. the whole pipeline finishes inside 30 minutes;
  4. the trainer's own forward and the engine's agree on logits to 1e-3
     relative on a 32-image batch.

Each criterion reports one PASS/FAIL line (echoed in the terminal summary).
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
import pytest
import torch

from toytrainer.config import TrainConfig
from toytrainer.export import export_container, export_images
from toytrainer.train import train

from .conftest import run_engine

RESULTS: list[tuple[str, bool, str]] = []

RUNTIME_LIMIT_S = 30 * 60


def _report(label: str, ok: bool, detail: str) -> None:
    RESULTS.append((label, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'}: {label} [{detail}]")
    assert ok, f"{label}: {detail}"


@dataclass
class Pipeline:
    result: object
    ann_dir: str
    snn_dir: str
    val_dir: str
    labels: np.ndarray
    ann_preds: np.ndarray
    ann_logits: np.ndarray
    snn: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    seconds: float = 0.0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory) -> Pipeline:
    base = tmp_path_factory.mktemp("acceptance")
    started = time.monotonic()

    cfg = TrainConfig(epochs=20, seed=0, out=str(base / "ann"))
    result = train(cfg)
    export_container(result.model, cfg.out)
    val_dir = base / "val"
    export_images(val_dir, result.split.val_x, result.split.val_y)

    code, _ = run_engine("convert", cfg.out, "--out", str(base / "snn"))
    assert code == 0, "conversion failed"

    code, lines = run_engine("run-ann", cfg.out, "--inputs", str(val_dir),
                             "--mode", "quant")
    assert code == 0, "run-ann failed"
    ann_preds = np.array([r["prediction"] for r in lines])
    ann_logits = np.array([r["logits"] for r in lines])

    pipe = Pipeline(result, cfg.out, str(base / "snn"), str(val_dir),
                    result.split.val_y, ann_preds, ann_logits)
    for delay in (3, 4):
        code, lines = run_engine("run-snn", pipe.snn_dir, "--inputs", str(val_dir),
                                 "--delay", str(delay))
        assert code == 0, f"run-snn failed at delay {delay}"
        pipe.snn[delay] = (np.array([r["prediction"] for r in lines]),
                          np.array([r["logits"] for r in lines]))
    pipe.seconds = time.monotonic() - started
    return pipe


def test_validation_accuracy_gate(pipeline):
    engine_acc = float(np.mean(pipeline.ann_preds == pipeline.labels))
    trainer_acc = pipeline.result.val_accuracy
    _report(
        "quantized model reaches 90% validation accuracy",
        engine_acc >= 0.90 and trainer_acc >= 0.90,
        f"engine-measured {engine_acc:.4f}, trainer-measured {trainer_acc:.4f}, "
        f"n={len(pipeline.labels)}",
    )


def test_spiking_tracks_analog_from_delay_three(pipeline):
    ann_acc = float(np.mean(pipeline.ann_preds == pipeline.labels))
    gaps = {}
    for delay in (3, 4):
        preds, _ = pipeline.snn[delay]
        acc = float(np.mean(preds == pipeline.labels))
        gaps[delay] = abs(acc - ann_acc)
    _report(
        "spiking accuracy within 1 point of analog at delay >= 3",
        all(g <= 0.01 for g in gaps.values()),
        "gap " + ", ".join(f"delay {d}: {g * 100:.3f}pp" for d, g in gaps.items()),
    )


def test_spiking_exact_at_full_delay(pipeline):
    preds, logits = pipeline.snn[4]
    ann_acc = float(np.mean(pipeline.ann_preds == pipeline.labels))
    snn_acc = float(np.mean(preds == pipeline.labels))
    agree = int(np.sum(preds == pipeline.ann_preds))
    max_gap = float(np.abs(logits - pipeline.ann_logits).max())
    _report(
        "spiking predictions exactly match analog at delay = window",
        snn_acc == ann_acc and agree == len(preds),
        f"accuracy {snn_acc:.4f} vs {ann_acc:.4f}, {agree}/{len(preds)} identical "
        f"predictions, max logit gap {max_gap:.2e}",
    )


def test_cross_implementation_logits(pipeline):
    x = pipeline.result.split.val_x[:32]
    model = pipeline.result.model
    model.eval()
    with torch.no_grad():
        mine = model(torch.from_numpy(x)).numpy().astype(np.float64)
    theirs = pipeline.ann_logits[:32]
    rel = float(max(
        np.abs(m - t).max() / max(np.abs(t).max(), 1e-12)
        for m, t in zip(mine, theirs)
    ))
    _report(
        "trainer and engine forwards agree to 1e-3 on logits",
        rel <= 1e-3,
        f"max relative deviation {rel:.2e} over 32 images",
    )


def test_pipeline_runtime(pipeline):
    _report(
        "train + export + engine evaluation inside 30 minutes",
        pipeline.seconds < RUNTIME_LIMIT_S,
        f"{pipeline.seconds:.1f}s of {RUNTIME_LIMIT_S}s budget",
    )
