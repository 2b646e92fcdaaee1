import numpy as np
import pytest

from spikedrive import ConfigError, ModelConfig, NumericError, build_model, forward, nrelu
from spikedrive.model import ConvStageConfig, tokenize

from .conftest import micro_config_dict
from .oracles import reference_forward


def test_config_validate_rejects_mismatched_embed():
    d = micro_config_dict()
    d["embed_dim"] = 12
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(d)


def test_config_validate_rejects_indivisible_heads():
    d = micro_config_dict()
    d["heads"] = 3
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(d)


def test_config_validate_rejects_fractional_mlp_hidden():
    d = micro_config_dict()
    d["mlp_ratio"] = 1.3
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(d)


def test_config_round_trips_through_dict(micro_config):
    again = ModelConfig.from_dict(micro_config.to_dict())
    assert again.to_dict() == micro_config.to_dict()


def test_site_names_cover_tokenizer_and_blocks(tiny_config):
    names = tiny_config.site_names()
    assert names[0] == "tok1"
    assert names[1] == "tok2"
    assert "blk1.att.score" in names
    assert "blk2.mlp.mid" in names
    # 2 tokenizer stages + 8 sites per block
    assert len(names) == 2 + 8 * tiny_config.blocks


def test_token_count_accounts_for_pooling(tiny_config):
    # 8x8 input, two stride-1 pad-1 convs each followed by a 2x2 pool
    assert tiny_config.token_grid == (2, 2)
    assert tiny_config.tokens == 4


def test_nrelu_basics():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(nrelu(x, 1), [0.0, 0.0, 3.0])
    np.testing.assert_array_equal(nrelu(x, 4), [0.0, 0.0, 0.75])
    with pytest.raises(ValueError):
        nrelu(x, 0)


def test_build_model_is_deterministic(micro_config):
    a = build_model(micro_config, seed=42)
    b = build_model(micro_config, seed=42)
    assert np.array_equal(a.head.weight, b.head.weight)
    assert a.sites["tok1"].step == b.sites["tok1"].step
    c = build_model(micro_config, seed=43)
    assert not np.array_equal(a.head.weight, c.head.weight)


def test_build_model_weight_envelope(micro_model):
    # truncated normal: nothing past two standard deviations
    for blk in micro_model.blocks:
        assert np.max(np.abs(blk.attn.wq)) <= 2 * 0.02 + 1e-12
    assert np.all(micro_model.head.bias == 0.0)


def test_calibration_covers_every_site(micro_model):
    for name in micro_model.config.site_names():
        q = micro_model.sites[name]
        assert q.step > 0
        assert q.levels == micro_model.config.quant_levels


def test_tokenize_layout_row_major(micro_model, rng):
    image = rng.standard_normal(micro_model.config.image)
    toks = tokenize(micro_model, image, "float")
    gh, gw = micro_model.config.token_grid
    assert toks.shape == (gh * gw, micro_model.config.embed_dim)


def test_forward_rejects_bad_mode(micro_model, rng):
    with pytest.raises(ConfigError):
        forward(micro_model, rng.standard_normal(micro_model.config.image), "int8")


def test_forward_rejects_bad_image_shape(micro_model, rng):
    with pytest.raises(Exception):
        forward(micro_model, rng.standard_normal((1, 6, 6)), "float")


def test_forward_flags_nonfinite_input(micro_model):
    image = np.full(micro_model.config.image, np.nan)
    with pytest.raises(NumericError):
        forward(micro_model, image, "float")


def test_quant_forward_matches_naive_reference(micro_model, rng):
    # the main oracle: straight-line loop forward vs the vectorized path
    for _ in range(3):
        image = rng.standard_normal(micro_model.config.image)
        got = forward(micro_model, image, "quant")
        want = reference_forward(micro_model, image)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_float_and_quant_modes_differ(micro_model, rng):
    image = rng.standard_normal(micro_model.config.image)
    a = forward(micro_model, image, "float")
    b = forward(micro_model, image, "quant")
    assert not np.allclose(a, b, atol=1e-12)


def test_score_scale_absorbed_matches_explicit(micro_model, rng):
    for _ in range(5):
        image = rng.standard_normal(micro_model.config.image)
        a = forward(micro_model, image, "quant", score_scale="explicit")
        b = forward(micro_model, image, "quant", score_scale="absorbed")
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_record_sites_returns_every_activation(micro_model, rng):
    image = rng.standard_normal(micro_model.config.image)
    _, sites = forward(micro_model, image, "quant", record_sites=True)
    assert set(sites) == set(micro_model.config.site_names())
    q = micro_model.sites["blk1.att.score"]
    grid = sites["blk1.att.score"] / q.step
    np.testing.assert_allclose(grid, np.round(grid), atol=1e-9)
    assert np.all(grid >= -1e-9) and np.all(grid <= q.levels + 1e-9)


def test_logits_invariant_to_token_permutation(micro_model, rng):
    # no positional embedding: permuting tokens cannot change the readout
    from spikedrive.model import forward_tokens

    image = rng.standard_normal(micro_model.config.image)
    toks = tokenize(micro_model, image, "quant")
    base = forward_tokens(micro_model, toks, "quant")
    perm = rng.permutation(toks.shape[0])
    swapped = forward_tokens(micro_model, toks[perm], "quant")
    np.testing.assert_allclose(base, swapped, rtol=1e-9, atol=1e-12)


def test_stage_config_round_trip():
    st = ConvStageConfig(16, kernel=5, stride=2, padding=2, maxpool=True, pool=3)
    assert ConvStageConfig.from_dict(st.to_dict()) == st


def test_presets_validate():
    ModelConfig.cifar_style().validate()
    ModelConfig.imagenet_style().validate()
