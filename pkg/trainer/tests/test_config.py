import pytest

from toytrainer.config import ArchConfig, ConfigError, TrainConfig


def test_default_arch_geometry():
    arch = ArchConfig()
    assert arch.embed_dim == 64
    assert arch.head_dim == 16
    assert arch.mlp_hidden == 128
    assert arch.token_grid == (2, 2)
    assert arch.tokens == 4


def test_site_names_order():
    arch = ArchConfig(channels=(8, 16), blocks=2, heads=2)
    assert arch.site_names() == [
        "tok1", "tok2",
        "blk1.att.in", "blk1.att.q", "blk1.att.k", "blk1.att.v",
        "blk1.att.score", "blk1.att.out", "blk1.mlp.in", "blk1.mlp.mid",
        "blk2.att.in", "blk2.att.q", "blk2.att.k", "blk2.att.v",
        "blk2.att.score", "blk2.att.out", "blk2.mlp.in", "blk2.mlp.mid",
    ]


def test_container_config_section():
    arch = ArchConfig(channels=(8, 32), blocks=1, heads=4)
    d = arch.container_config(quant_levels=4)
    assert d["image"] == [1, 8, 8]
    assert d["embed_dim"] == 32
    assert d["quant_levels"] == 4
    assert d["mlp_ratio"] == 2.0
    assert len(d["conv_stages"]) == 2
    for st in d["conv_stages"]:
        assert st == {"out_channels": st["out_channels"], "kernel": 3, "stride": 1,
                      "padding": 1, "maxpool": True, "pool": 2}


@pytest.mark.parametrize("kwargs", [
    {"heads": 3},                       # 64 % 3 != 0
    {"mlp_ratio": 0.3},                 # 64 * 0.3 not whole
    {"channels": ()},                   # no stages
    {"channels": (8, 16, 16, 16)},      # 8x8 pooled past 1x1
    {"classes": 1},
    {"blocks": 0},
])
def test_arch_rejects(kwargs):
    with pytest.raises(ConfigError):
        ArchConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"epochs": 0},
    {"quant_levels": 1},
    {"batch_size": 0},
    {"lr": 0.0},
    {"lr_schedule": "step"},
    {"val_fraction": 1.0},
    {"dataset": "imagenet"},
])
def test_train_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_three_stage_grid():
    # 28x28 input: three halvings land on 3x3
    arch = ArchConfig(image=(1, 28, 28), channels=(8, 16, 32), heads=4)
    assert arch.token_grid == (3, 3)
    assert arch.tokens == 9
