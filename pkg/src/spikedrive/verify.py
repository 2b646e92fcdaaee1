"""Equivalence and property checking between the quantized and spiking paths.

Tolerances used here:
  * relative logit error compares the max-norm of the difference against the
    max-norm of the reference logits;
  * delay-sweep monotonicity clamps mean errors below NOISE_FLOOR before the
    non-increasing check (full-delay runs sit at float-noise level);
  * saturation means the mean error is within SATURATION_TOL (absolute) of
    the full-delay error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .convert import SpikingModel
from .engine import run_snn, tdec_matmul, tdec_maxpool
from .errors import ConversionError
from .model import TransformerModel, forward
from .tensor_ops import maxpool2d

NOISE_FLOOR = 1e-12
SATURATION_TOL = 1e-3
_TINY = 1e-30


@dataclass
class TdecCheckReport:
    trials: int
    seed: int
    checked: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def check_tdec_properties(trials: int = 1000, seed: int = 0,
                          max_window: int = 8) -> TdecCheckReport:
    """Randomized exactness checks of both temporally decomposed operators.

    Every matmul trial asserts integer-exact totals against the dense product
    of the spike counts, nonnegative integer components, and the sharp
    (2t-1)*inner component bound; every maxpool trial asserts binary outputs
    and exact totals against a dense max pool of the counts.
    """
    rng = np.random.default_rng(seed)
    report = TdecCheckReport(trials, seed)
    for i in range(trials):
        t_win = int(rng.integers(1, max_window + 1))
        density = float(rng.uniform(0.1, 0.9))

        m, p = (int(v) for v in rng.integers(1, 9, size=2))
        kk = int(rng.integers(1, 17))
        a = (rng.random((t_win, m, kk)) < density).astype(np.float64)
        b = (rng.random((t_win, kk, p)) < density).astype(np.float64)
        comp = tdec_matmul(a, b)
        dense = a.sum(axis=0) @ b.sum(axis=0)
        if not np.array_equal(comp.sum(axis=0), dense):
            report.failures.append(f"trial {i}: matmul total mismatch")
        if np.any(comp < 0) or np.any(comp != np.floor(comp)):
            report.failures.append(f"trial {i}: matmul component not a nonnegative integer")
        # per inner index: both-fire case contributes A_t + B_t - 1 <= 2t - 1
        bound = kk * (2.0 * np.arange(1, t_win + 1, dtype=np.float64) - 1.0)
        if np.any(comp > bound[:, None, None]):
            report.failures.append(f"trial {i}: matmul component above (2t-1)*inner bound")
        report.checked["matmul"] = report.checked.get("matmul", 0) + 1

        c = int(rng.integers(1, 4))
        h = int(rng.integers(2, 9))
        w = int(rng.integers(2, 9))
        win = int(rng.integers(2, min(h, w) + 1))
        x = (rng.random((t_win, c, h, w)) < density).astype(np.float64)
        y = tdec_maxpool(x, win)
        if not np.all((y == 0.0) | (y == 1.0)):
            report.failures.append(f"trial {i}: maxpool output not binary")
        if not np.array_equal(y.sum(axis=0), maxpool2d(x.sum(axis=0), win)):
            report.failures.append(f"trial {i}: maxpool total mismatch")
        report.checked["maxpool"] = report.checked.get("maxpool", 0) + 1
    return report


def _logit_errors(ref: np.ndarray, got: np.ndarray) -> tuple[float, float]:
    abs_err = float(np.max(np.abs(ref - got)))
    rel_err = abs_err / max(float(np.max(np.abs(ref))), _TINY)
    return abs_err, rel_err


@dataclass
class EquivalenceReport:
    tau_d: int
    images: int
    logit_abs_err: float
    logit_rel_err: float
    top1_agreement: float
    site_abs_err: dict[str, float] = field(default_factory=dict)
    site_rel_err: dict[str, float] = field(default_factory=dict)
    spike_totals: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EquivalenceReport":
        return cls(**json.loads(text))


def _check_pair(model: TransformerModel, spiking: SpikingModel) -> None:
    if model.config.to_dict() != spiking.config.to_dict():
        raise ConversionError("model pair mismatch: configs differ")
    if spiking.time_window != model.config.quant_levels:
        raise ConversionError(
            f"time window {spiking.time_window} != quant levels {model.config.quant_levels}"
        )


def compare_ann_snn(model: TransformerModel, spiking: SpikingModel,
                    images: np.ndarray, tau_d: int) -> EquivalenceReport:
    """Quantized forward vs spiking simulation over a batch of images."""
    _check_pair(model, spiking)
    abs_l = rel_l = 0.0
    agree = 0
    site_abs: dict[str, float] = {}
    site_rel: dict[str, float] = {}
    spikes: dict[str, int] = {}
    for image in images:
        ref, sites = forward(model, image, "quant", record_sites=True)
        got, stats = run_snn(spiking, image, tau_d, record_phi=True)
        a, r = _logit_errors(ref, got)
        abs_l, rel_l = max(abs_l, a), max(rel_l, r)
        agree += int(np.argmax(ref) == np.argmax(got))
        for name, phi in stats.phi.items():
            if name not in sites:
                continue  # pool passthroughs have no recorded ANN twin
            d = float(np.max(np.abs(sites[name] - phi)))
            site_abs[name] = max(site_abs.get(name, 0.0), d)
            scale = max(float(np.max(np.abs(sites[name]))), _TINY)
            site_rel[name] = max(site_rel.get(name, 0.0), d / scale)
        for name, entry in stats.per_site.items():
            spikes[name] = spikes.get(name, 0) + entry["spikes"]
    n = len(images)
    return EquivalenceReport(int(tau_d), n, abs_l, rel_l, agree / n, site_abs, site_rel, spikes)


@dataclass
class DelaySweepResult:
    delays: list[int]
    mean_abs_err: list[float]
    top1_agreement: list[float]
    full_delay_err: float
    monotonic: bool
    saturated: list[bool]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DelaySweepResult":
        return cls(**json.loads(text))


def sweep_delay(model: TransformerModel, spiking: SpikingModel,
                images: np.ndarray, delays) -> DelaySweepResult:
    """Mean absolute logit error and top-1 agreement per firing delay.

    The full-delay (tau_d = T) error is always computed as the saturation
    reference, whether or not T is in the requested list.
    """
    _check_pair(model, spiking)
    delays = [int(d) for d in delays]
    refs = [forward(model, image, "quant") for image in images]
    tops = [int(np.argmax(r)) for r in refs]

    def run(delay: int) -> tuple[float, float]:
        errs = []
        agree = 0
        for image, ref, top in zip(images, refs, tops):
            got, _ = run_snn(spiking, image, delay)
            errs.append(float(np.mean(np.abs(ref - got))))
            agree += int(np.argmax(got) == top)
        return float(np.mean(errs)), agree / len(images)

    full_err, _ = run(spiking.time_window)
    means, agrees = [], []
    for d in delays:
        m, a = run(d)
        means.append(m)
        agrees.append(a)
    clamped = [max(m, NOISE_FLOOR) for m in means]
    monotonic = all(b <= a for a, b in zip(clamped, clamped[1:]))
    saturated = [abs(m - full_err) <= SATURATION_TOL for m in means]
    return DelaySweepResult(delays, means, agrees, full_err, monotonic, saturated)


@dataclass
class SpikeActivitySummary:
    tau_d: int
    images: int
    per_site: dict[str, dict] = field(default_factory=dict)
    total_spikes: int = 0
    ticks_per_layer: int = 0
    ticks_accumulated: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def spike_stats(spiking: SpikingModel, images: np.ndarray, tau_d: int) -> SpikeActivitySummary:
    """Aggregate firing activity over a batch: totals and per-neuron rates."""
    summary = SpikeActivitySummary(int(tau_d), len(images))
    acc: dict[str, dict] = {}
    ticks = ticks_acc = 0
    for image in images:
        _, stats = run_snn(spiking, image, tau_d)
        ticks, ticks_acc = stats.ticks_per_layer, stats.ticks_accumulated
        for name, entry in stats.per_site.items():
            slot = acc.setdefault(name, {"kind": entry["kind"], "neurons": entry["neurons"],
                                         "spikes": 0})
            slot["spikes"] += entry["spikes"]
    t_win = spiking.time_window
    for name, slot in acc.items():
        denom = slot["neurons"] * t_win * len(images)
        summary.per_site[name] = {
            "kind": slot["kind"],
            "neurons": slot["neurons"],
            "spikes": slot["spikes"],
            "rate": slot["spikes"] / denom,
        }
        summary.total_spikes += slot["spikes"]
    summary.ticks_per_layer = ticks
    summary.ticks_accumulated = ticks_acc
    return summary
