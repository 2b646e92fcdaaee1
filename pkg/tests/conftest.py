import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikedrive import ModelConfig, build_model, convert

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def micro_config_dict():
    return {
        "image": [2, 6, 6],
        "conv_stages": [
            {"out_channels": 8, "kernel": 3, "stride": 1, "padding": 1,
             "maxpool": True, "pool": 2},
        ],
        "embed_dim": 8,
        "blocks": 1,
        "heads": 2,
        "mlp_ratio": 2.0,
        "quant_levels": 4,
        "classes": 3,
    }


@pytest.fixture(scope="session")
def micro_config():
    return ModelConfig.from_dict(micro_config_dict())


@pytest.fixture(scope="session")
def micro_model(micro_config):
    return build_model(micro_config, seed=11)


@pytest.fixture(scope="session")
def micro_spiking(micro_model):
    return convert(micro_model)


@pytest.fixture(scope="session")
def tiny_config():
    with open(CONFIG_DIR / "tiny.json", encoding="utf-8") as f:
        return ModelConfig.from_dict(json.load(f))


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=3)


@pytest.fixture(scope="session")
def tiny_spiking(tiny_model):
    return convert(tiny_model)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from .test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in RESULTS:
        line = f"{'PASS' if ok else 'FAIL'}: {label}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
