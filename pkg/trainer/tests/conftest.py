import json
import subprocess
import sys

import pytest
import torch
from hypothesis import HealthCheck, settings

from toytrainer.config import ArchConfig, TrainConfig
from toytrainer.train import train

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

torch.set_num_threads(min(4, torch.get_num_threads()))


def run_engine(*args: str) -> tuple[int, list[dict]]:
    """Invoke the inference engine CLI; returns (exit code, stdout JSON lines).

    The engine is consumed strictly as an installed command, never imported:
    the trainer's only contracts with it are the file formats and this CLI.
    """
    proc = subprocess.run(
        [sys.executable, "-m", "spikedrive", *args],
        capture_output=True, text=True, timeout=600,
    )
    lines = [json.loads(l) for l in proc.stdout.splitlines() if l.strip()]
    return proc.returncode, lines


@pytest.fixture(scope="session")
def small_arch() -> ArchConfig:
    return ArchConfig(channels=(8, 16), blocks=1, heads=2, mlp_ratio=2.0)


@pytest.fixture(scope="session")
def quick_run():
    """A short but non-trivial training run shared by the format tests."""
    cfg = TrainConfig(epochs=3, seed=0)
    return cfg, train(cfg)


@pytest.fixture(scope="session")
def rng():
    import numpy as np
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from .test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}: {label} [{detail}]")
