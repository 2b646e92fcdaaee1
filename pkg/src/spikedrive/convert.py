"""Mapping a quantized model onto an equivalent spiking network.

Each activation site becomes one layer of delayed integrate-and-fire neurons.
The time window equals the quantization level count, and a site's logical
threshold is theta = step * levels: one spike carries one grid step of value.

Firing thresholds absorb any scaling the spike-domain computation cannot
apply on the fly:

  * attention-score neurons: theta' = theta * N * sqrt(dk) * T. Their charge
    arrives as temporally decomposed products of two spike trains, each
    weighted by its presynaptic theta, which makes the total charge larger
    than the normalized score by exactly N * sqrt(dk) * T.
  * attention-output neurons: theta' = theta * T, for the same reason minus
    the score normalization.
  * everything else: theta' = theta.

Max pooling needs no neuron: it passes spikes through (recorded as a
passthrough site so reports can account for it).
"""

from __future__ import annotations

import math
from copy import deepcopy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConversionError
from .model import Block, Head, ModelConfig, TokenizerStage, TransformerModel
from .quant import QuantParams, fold_bn
from .tensor_ops import ConvSpec

KIND_CONV = "conv"
KIND_LINEAR = "linear"
KIND_SCORE = "attention-score"
KIND_ATT_OUT = "attention-output"
KIND_POOL = "pool-passthrough"

NEURON_KINDS = (KIND_CONV, KIND_LINEAR, KIND_SCORE, KIND_ATT_OUT, KIND_POOL)

TDEC_MAXPOOL = "maxpool"
TDEC_MATMUL = "matmul"


@dataclass
class NeuronSite:
    """One neuron layer (or pool passthrough) in the spiking network.

    theta is the logical per-spike value used by downstream consumers;
    theta_fire is the internal firing threshold after scale absorption.
    presyn lists the upstream spike sources entering this site's charge,
    as (site name, logical theta) pairs; sites driven by analog currents
    only (the input image) have an empty list.
    """

    name: str
    kind: str
    step: float
    levels: int
    theta: float
    theta_fire: float
    presyn: list[tuple[str, float]] = field(default_factory=list)


@dataclass
class TdecSite:
    """Marks a node that runs temporally decomposed (maxpool or matmul)."""

    name: str
    kind: str


@dataclass
class SpikingStage:
    conv: ConvSpec
    site: NeuronSite
    pool: int | None = None
    pool_site: NeuronSite | None = None


@dataclass
class SpikingAttention:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    site_in: NeuronSite
    site_q: NeuronSite
    site_k: NeuronSite
    site_v: NeuronSite
    site_score: NeuronSite
    site_out: NeuronSite


@dataclass
class SpikingMlp:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    site_in: NeuronSite
    site_mid: NeuronSite


@dataclass
class SpikingBlock:
    name: str
    attn: SpikingAttention
    mlp: SpikingMlp


@dataclass
class SpikingModel:
    config: ModelConfig
    tokenizer: list[SpikingStage]
    blocks: list[SpikingBlock]
    head: Head
    time_window: int
    tdec_sites: list[TdecSite] = field(default_factory=list)

    def neurons(self) -> dict[str, NeuronSite]:
        """All sites in forward order, pool passthroughs included."""
        out: dict[str, NeuronSite] = {}
        for st in self.tokenizer:
            out[st.site.name] = st.site
            if st.pool_site is not None:
                out[st.pool_site.name] = st.pool_site
        for blk in self.blocks:
            a, m = blk.attn, blk.mlp
            for site in (a.site_in, a.site_q, a.site_k, a.site_v, a.site_score,
                         a.site_out, m.site_in, m.site_mid):
                out[site.name] = site
        return out

    def firing_neurons(self) -> dict[str, NeuronSite]:
        return {k: v for k, v in self.neurons().items() if v.kind != KIND_POOL}

    def quantizers(self) -> dict[str, QuantParams]:
        return {k: QuantParams(v.step, v.levels) for k, v in self.firing_neurons().items()}


def absorb_scale(theta: float, delta: float) -> float:
    """Move a multiplicative input factor delta into the threshold: theta/delta."""
    if not (delta > 0.0) or not math.isfinite(delta):
        raise ConversionError(f"scale factor must be finite and > 0, got {delta}")
    return theta / delta


def fold_all_bn(model: TransformerModel) -> TransformerModel:
    """New model with every BatchNorm folded into the preceding linear map."""
    folded = deepcopy(model)
    for st in folded.tokenizer:
        if st.bn is not None:
            w, b = fold_bn(st.conv.kernel, st.conv.bias, st.bn, out_axis=0)
            st.conv = ConvSpec(w, b, st.conv.stride, st.conv.padding)
            st.bn = None
    for blk in folded.blocks:
        a = blk.attn
        for wname, bname, bn_name in (("wq", "bq", "bn_q"), ("wk", "bk", "bn_k"),
                                      ("wv", "bv", "bn_v"), ("wo", "bo", "bn_o")):
            bn = getattr(a, bn_name)
            if bn is not None:
                w, b = fold_bn(getattr(a, wname), getattr(a, bname), bn, out_axis=1)
                setattr(a, wname, w)
                setattr(a, bname, b)
                setattr(a, bn_name, None)
        m = blk.mlp
        if m.bn1 is not None:
            m.w1, m.b1 = fold_bn(m.w1, m.b1, m.bn1, out_axis=1)
            m.bn1 = None
        if m.bn2 is not None:
            m.w2, m.b2 = fold_bn(m.w2, m.b2, m.bn2, out_axis=1)
            m.bn2 = None
    return folded


def _site_params(model: TransformerModel, name: str) -> QuantParams:
    q = model.sites.get(name)
    if q is None:
        raise ConversionError(f"site {name} has no quantizer step")
    if not (q.step > 0.0) or not np.isfinite(q.step):
        raise ConversionError(f"site {name} has unusable step {q.step}")
    return q


def map_thresholds(model: TransformerModel) -> SpikingModel:
    """Quantized, BN-folded model -> spiking model with one neuron layer per site."""
    if model.bn_count() != 0:
        raise ConversionError("fold BatchNorm before mapping thresholds (bn_count != 0)")
    cfg = model.config
    t_win = cfg.quant_levels
    n_tok = cfg.tokens
    score_delta = 1.0 / (n_tok * math.sqrt(cfg.head_dim) * t_win)
    out_delta = 1.0 / t_win

    def site(name: str, kind: str, presyn: list[tuple[str, float]],
             delta: float = 1.0) -> NeuronSite:
        q = _site_params(model, name)
        theta = q.theta
        theta_fire = absorb_scale(theta, delta)
        if not (theta_fire > 0.0):
            raise ConversionError(f"site {name} maps to non-positive threshold {theta_fire}")
        return NeuronSite(name, kind, q.step, q.levels, theta, theta_fire, presyn)

    tokenizer: list[SpikingStage] = []
    upstream: list[tuple[str, float]] = []  # spike sources feeding the next layer
    for st in model.tokenizer:
        s = site(st.site, KIND_CONV, upstream)
        pool_site = None
        feed_name, feed_theta = st.site, s.theta
        if st.pool:
            pool_site = NeuronSite(f"{st.site}.pool", KIND_POOL, s.step, s.levels,
                                   s.theta, s.theta, [(st.site, s.theta)])
            feed_name = pool_site.name
        tokenizer.append(SpikingStage(deepcopy(st.conv), s, st.pool, pool_site))
        upstream = [(feed_name, feed_theta)]

    stream_sources = list(upstream)  # residual stream constituents so far
    blocks: list[SpikingBlock] = []
    for blk in model.blocks:
        a, m = blk.attn, blk.mlp
        pre = f"{blk.name}.att"
        s_in = site(f"{pre}.in", KIND_LINEAR, list(stream_sources))
        s_q = site(f"{pre}.q", KIND_LINEAR, [(s_in.name, s_in.theta)])
        s_k = site(f"{pre}.k", KIND_LINEAR, [(s_in.name, s_in.theta)])
        s_v = site(f"{pre}.v", KIND_LINEAR, [(s_in.name, s_in.theta)])
        s_sc = site(f"{pre}.score", KIND_SCORE,
                    [(s_q.name, s_q.theta), (s_k.name, s_k.theta)], score_delta)
        s_out = site(f"{pre}.out", KIND_ATT_OUT,
                     [(s_sc.name, s_sc.theta), (s_v.name, s_v.theta)], out_delta)
        attn = SpikingAttention(a.wq.copy(), a.bq.copy(), a.wk.copy(), a.bk.copy(),
                                a.wv.copy(), a.bv.copy(), a.wo.copy(), a.bo.copy(),
                                s_in, s_q, s_k, s_v, s_sc, s_out)
        stream_sources.append((s_out.name, s_out.theta))
        mpre = f"{blk.name}.mlp"
        s_e = site(f"{mpre}.in", KIND_LINEAR, list(stream_sources))
        s_f = site(f"{mpre}.mid", KIND_LINEAR, [(s_e.name, s_e.theta)])
        mlp = SpikingMlp(m.w1.copy(), m.b1.copy(), m.w2.copy(), m.b2.copy(), s_e, s_f)
        stream_sources.append((s_f.name, s_f.theta))
        blocks.append(SpikingBlock(blk.name, attn, mlp))

    head = Head(model.head.weight.copy(), model.head.bias.copy())
    return SpikingModel(cfg, tokenizer, blocks, head, t_win)


def annotate_tdec(spiking: SpikingModel) -> SpikingModel:
    """Mark every node that must run temporally decomposed.

    Max pools (their inputs are spike trains, so the running-max trick
    applies) and the two attention matmuls per block (score and output).
    """
    for s in spiking.neurons().values():
        if s.kind not in NEURON_KINDS:
            raise ConversionError(f"unknown site kind {s.kind!r} at {s.name}")
    annotations: list[TdecSite] = []
    for st in spiking.tokenizer:
        if st.pool:
            annotations.append(TdecSite(f"{st.site.name}.pool", TDEC_MAXPOOL))
    for blk in spiking.blocks:
        annotations.append(TdecSite(f"{blk.name}.att.qk", TDEC_MATMUL))
        annotations.append(TdecSite(f"{blk.name}.att.sv", TDEC_MATMUL))
    spiking.tdec_sites = annotations
    return spiking


def convert(model: TransformerModel) -> SpikingModel:
    """fold_all_bn + map_thresholds + annotate_tdec in one step."""
    if not model.quant_ready():
        missing = [n for n in model.config.site_names() if n not in model.sites]
        raise ConversionError(f"model has uncalibrated sites: {missing[:3]}...")
    return annotate_tdec(map_thresholds(fold_all_bn(model)))
