import math

import numpy as np
import pytest

from spikedrive import (ConversionError, absorb_scale, convert, fold_all_bn,
                        forward)
from spikedrive.convert import (KIND_ATT_OUT, KIND_CONV, KIND_LINEAR,
                                KIND_POOL, KIND_SCORE, map_thresholds)


def test_absorb_scale_frozen_example():
    # theta=1 feeding a node that divides by N*sqrt(dk)*T with N=2, dk=4, T=4
    delta = 1.0 / (2 * math.sqrt(4.0) * 4)
    assert absorb_scale(1.0, delta) == 16.0


def test_absorb_scale_identity_and_guards():
    assert absorb_scale(2.5, 1.0) == 2.5
    with pytest.raises(ConversionError):
        absorb_scale(1.0, 0.0)
    with pytest.raises(ConversionError):
        absorb_scale(1.0, -0.5)


def test_fold_all_bn_clears_every_bn(micro_model):
    folded = fold_all_bn(micro_model)
    assert folded.bn_count() == 0
    assert micro_model.bn_count() > 0  # input untouched


def test_fold_all_bn_preserves_quant_forward(micro_model, rng):
    folded = fold_all_bn(micro_model)
    for _ in range(5):
        image = rng.standard_normal(micro_model.config.image)
        a = forward(micro_model, image, "quant")
        b = forward(folded, image, "quant")
        np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-12)


def test_map_thresholds_requires_folded_model(micro_model):
    with pytest.raises(ConversionError):
        map_thresholds(micro_model)


def test_threshold_equals_step_times_levels(micro_model, micro_spiking):
    for name, q in micro_model.sites.items():
        s = micro_spiking.neurons()[name]
        assert s.theta == pytest.approx(q.step * q.levels, rel=0, abs=0)


def test_score_threshold_absorbs_denominator(micro_model, micro_spiking):
    cfg = micro_model.config
    t = cfg.quant_levels
    denom = cfg.tokens * math.sqrt(cfg.head_dim) * t
    s = micro_spiking.neurons()["blk1.att.score"]
    assert s.theta_fire == pytest.approx(s.theta * denom, rel=1e-15)


def test_attention_output_threshold_absorbs_window(micro_spiking):
    t = micro_spiking.time_window
    s = micro_spiking.neurons()["blk1.att.out"]
    assert s.theta_fire == pytest.approx(s.theta * t, rel=1e-15)


def test_plain_sites_keep_logical_threshold(micro_spiking):
    for name in ("tok1", "blk1.att.q", "blk1.mlp.mid"):
        s = micro_spiking.neurons()[name]
        assert s.theta_fire == s.theta


def test_site_kinds(micro_spiking):
    kinds = {n: s.kind for n, s in micro_spiking.neurons().items()}
    assert kinds["tok1"] == KIND_CONV
    assert kinds["tok1.pool"] == KIND_POOL
    assert kinds["blk1.att.in"] == KIND_LINEAR
    assert kinds["blk1.att.score"] == KIND_SCORE
    assert kinds["blk1.att.out"] == KIND_ATT_OUT


def test_presyn_wiring_tracks_residual_stream(tiny_spiking):
    neurons = tiny_spiking.neurons()
    # first block reads the pooled tokenizer output
    assert [n for n, _ in neurons["blk1.att.in"].presyn] == ["tok2.pool"]
    # second block's mlp sees every residual contribution accumulated so far
    sources = [n for n, _ in neurons["blk2.mlp.in"].presyn]
    assert sources == ["tok2.pool", "blk1.att.out", "blk1.mlp.mid", "blk2.att.out"]
    # recorded presynaptic weights are the logical thresholds of the sources
    for n, th in neurons["blk2.mlp.in"].presyn:
        assert th == neurons[n].theta


def test_tdec_annotations(tiny_spiking):
    entries = {(t.name, t.kind) for t in tiny_spiking.tdec_sites}
    assert ("tok1.pool", "maxpool") in entries
    assert ("tok2.pool", "maxpool") in entries
    assert ("blk1.att.qk", "matmul") in entries
    assert ("blk2.att.sv", "matmul") in entries
    assert len(entries) == 2 + 2 * len(tiny_spiking.blocks)


def test_convert_requires_calibration(micro_config):
    from spikedrive.model import build_model

    model = build_model(micro_config, seed=2)
    model.sites.pop("blk1.att.q")
    with pytest.raises(ConversionError):
        convert(model)


def test_time_window_equals_quant_levels(micro_spiking, micro_config):
    assert micro_spiking.time_window == micro_config.quant_levels


def test_convert_leaves_input_model_untouched(micro_model):
    before = micro_model.tokenizer[0].conv.kernel.copy()
    bn_before = micro_model.bn_count()
    convert(micro_model)
    assert np.array_equal(micro_model.tokenizer[0].conv.kernel, before)
    assert micro_model.bn_count() == bn_before
