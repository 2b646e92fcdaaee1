import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from toytrainer.model import ActQuant


def oracle_quant(x: np.ndarray, step: np.float32, levels: int) -> np.ndarray:
    """Half-up grid quantizer in plain numpy float32, same op order."""
    x = x.astype(np.float32)
    u = np.clip(x / step, np.float32(0.0), np.float32(levels))
    return step * np.floor(u + np.float32(0.5))


def make_quant(step: float, levels: int) -> ActQuant:
    q = ActQuant(levels)
    with torch.no_grad():
        q.step.fill_(step)
        q.initialized.fill_(True)
    q.eval()
    return q


def test_eval_matches_oracle_exactly():
    rng = np.random.default_rng(42)
    x = rng.normal(0.0, 2.0, size=4096).astype(np.float32)
    q = make_quant(0.37, 4)
    with torch.no_grad():
        got = q(torch.from_numpy(x)).numpy()
    want = oracle_quant(x, np.float32(0.37), 4)
    assert np.array_equal(got, want)


@given(
    seed=st.integers(0, 10_000),
    step=st.floats(1e-3, 10.0),
    levels=st.integers(1, 16),
)
@settings(max_examples=60)
def test_eval_matches_oracle_property(seed, step, levels):
    rng = np.random.default_rng(seed)
    x = (rng.normal(0.0, 3.0 * step, size=512)).astype(np.float32)
    q = make_quant(step, levels)
    with torch.no_grad():
        got = q(torch.from_numpy(x)).numpy()
    want = oracle_quant(x, np.float32(q.step.item()), levels)
    assert np.array_equal(got, want)


def test_output_lands_on_grid():
    q = make_quant(0.25, 4)
    x = torch.linspace(-1.0, 3.0, 1001)
    y = q(x) / 0.25
    assert torch.all(y == torch.round(y))
    assert y.min() >= 0 and y.max() <= 4


def test_train_and_eval_forward_agree():
    q = make_quant(0.11, 8)
    x = torch.randn(256) * 0.5
    with torch.no_grad():
        q.eval()
        ye = q(x)
        q.train()
        yt = q(x)
    assert torch.allclose(ye, yt, rtol=1e-6, atol=1e-7)


def test_first_batch_initializes_step():
    q = ActQuant(4)
    q.train()
    x = torch.rand(1000) * 2.0 - 0.5
    q(x)
    assert bool(q.initialized)
    want = 2.0 * x.abs().mean().item() / math.sqrt(4)
    assert q.step.item() == pytest.approx(want, rel=1e-5)
    # a second batch must not re-run the statistical init
    q(torch.full((10,), 100.0))
    assert q.step.item() == pytest.approx(want, rel=1e-5)


def test_gradient_masked_outside_clip_range():
    q = make_quant(0.5, 4)
    q.train()
    # levels*step = 2.0; pick points well inside, below, and above
    x = torch.tensor([-1.0, 0.7, 1.3, 5.0], requires_grad=True)
    q(x).sum().backward()
    assert x.grad.tolist() == [0.0, 1.0, 1.0, 0.0]


def test_step_gradient_follows_lsq_rule():
    levels = 4
    q = make_quant(0.5, levels)
    q.train()
    x = torch.tensor([-1.0, 0.7, 5.0])
    y = q(x)
    y.sum().backward()
    g = 1.0 / math.sqrt(x.numel() * levels)
    # below range: 0; inside: round(u) - u; above: levels
    u = 0.7 / 0.5
    want = (0.0 + (round(u) - u) + levels) * g
    assert q.step.grad.item() == pytest.approx(want, rel=1e-5)


def test_rounding_is_half_up_not_banker():
    # u = 0.5 and 1.5 both round UP on the half-up grid; nearest-even
    # would send 0.5 down to 0 and 1.5 up to 2
    q = make_quant(1.0, 4)
    x = torch.tensor([0.5, 1.5, 2.5])
    assert q(x).tolist() == [1.0, 2.0, 3.0]


def test_rejects_bad_levels():
    with pytest.raises(ValueError):
        ActQuant(0)
