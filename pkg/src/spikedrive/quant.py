"""Quantizers and BatchNorm folding.

Rounding is half-up everywhere: round(x) := floor(x + 1/2). Nearest-even
rounding would silently break the exact correspondence between the quantized
forward pass and the spiking simulation, so plain numpy rounding is off-limits
in this package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """One activation quantizer: uniform grid {0, step, ..., levels*step}."""

    step: float
    levels: int

    def __post_init__(self):
        if not (self.step > 0.0) or not np.isfinite(self.step):
            raise ConfigError(f"quantizer step must be finite and > 0, got {self.step}")
        if int(self.levels) != self.levels or self.levels < 1:
            raise ConfigError(f"quantizer levels must be an integer >= 1, got {self.levels}")

    @property
    def theta(self) -> float:
        """Grid ceiling step*levels; becomes the logical firing threshold."""
        return self.step * self.levels


@dataclass
class BNParams:
    """Inference-time batch norm statistics for one layer."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        shapes = {self.gamma.shape, self.beta.shape, self.mean.shape, self.var.shape}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ShapeError(f"BN parameter vectors must share one 1-D shape, got {shapes}")
        if not (self.eps > 0.0):
            raise ConfigError(f"BN eps must be > 0, got {self.eps}")
        if np.any(self.var < 0.0):
            raise ConfigError("BN variance must be nonnegative")

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BNParams":
        # gamma = sqrt(1+eps) so gamma/sqrt(var+eps) is exactly 1.0 and an
        # identity BN folds to bitwise-unchanged weights
        return cls(
            gamma=np.full(channels, np.sqrt(1.0 + eps)),
            beta=np.zeros(channels),
            mean=np.zeros(channels),
            var=np.ones(channels),
            eps=eps,
        )

    def scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Collapse to the equivalent per-channel affine (scale, shift)."""
        denom = self.var + self.eps
        if np.any(denom <= 0.0):
            raise NumericError("BN variance + eps must be positive")
        scale = self.gamma / np.sqrt(denom)
        return scale, self.beta - self.mean * scale


def lsq(x: np.ndarray, q: QuantParams) -> np.ndarray:
    """step * round(clip(x/step, 0, levels)), half-up."""
    u = np.clip(np.asarray(x, dtype=np.float64) / q.step, 0.0, float(q.levels))
    return q.step * np.floor(u + 0.5)


def qcfs(x: np.ndarray, lam: float, levels: int, shift: float = 0.5) -> np.ndarray:
    """lam * clip(floor(x*levels/lam + shift)/levels, 0, 1).

    With lam = step*levels and shift = 1/2 this is the same map as lsq; the
    two are kept as separate code paths so each can check the other. The
    1/levels factor is applied to lam, not to the grid index: both orders are
    the same expression, but (lam/levels)*k reproduces lsq's step*k arithmetic
    bit for bit whenever lam = step*levels is exactly representable, while
    lam*(k/levels) picks up a rounding of its own for non-power-of-two levels.
    """
    if not (lam > 0.0) or not np.isfinite(lam):
        raise ConfigError(f"qcfs ceiling must be finite and > 0, got {lam}")
    if int(levels) != levels or levels < 1:
        raise ConfigError(f"qcfs levels must be an integer >= 1, got {levels}")
    x = np.asarray(x, dtype=np.float64)
    k = np.clip(np.floor(x * levels / lam + shift), 0.0, levels)
    return (lam / levels) * k


def fold_bn(
    weight: np.ndarray, bias: np.ndarray, bn: BNParams, out_axis: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Fold BN into the preceding linear map.

    weight' = weight * gamma/sqrt(var+eps) per output channel,
    bias'   = (bias - mean) * gamma/sqrt(var+eps) + beta.
    out_axis selects which weight axis indexes output channels
    (0 for conv kernels [O,I,kh,kw], 1 for token matrices [in,out]).
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n = bn.gamma.shape[0]
    ax = out_axis % weight.ndim
    if weight.shape[ax] != n or bias.shape != (n,):
        raise ShapeError(
            f"BN over {n} channels does not match weight axis {ax} "
            f"({weight.shape}) / bias ({bias.shape})"
        )
    scale, _ = bn.scale_shift()
    expand = [1] * weight.ndim
    expand[ax] = n
    folded_w = weight * scale.reshape(expand)
    folded_b = (bias - bn.mean) * scale + bn.beta
    return folded_w, folded_b
