"""Dense tensor primitives used by the float/quant forward passes.

Everything is float64 and operates on single examples (no batch axis).
Feature maps are channel-first [C, H, W]; token matrices are [N, D].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class ConvSpec:
    """A 2-D convolution layer: kernel [out, in, kh, kw], per-out-channel bias."""

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (1, 1)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be 4-D, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[0]} output channels"
            )
        if min(self.stride) < 1:
            raise ShapeError(f"conv stride must be >= 1, got {self.stride}")
        if min(self.padding) < 0:
            raise ShapeError(f"conv padding must be >= 0, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Strict 2-D matrix product [M,K] @ [K,P] -> [M,P]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation of [C,H,W] with spec.kernel plus bias.

    Output extents: H' = floor((H + 2*ph - kh) / sh) + 1, same for W.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [C,H,W], got shape {x.shape}")
    c, h, w = x.shape
    o, i, kh, kw = spec.kernel.shape
    if i != c:
        raise ShapeError(f"input has {c} channels, kernel expects {i}")
    ph, pw = spec.padding
    sh, sw = spec.stride
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.einsum("oikl,ihwkl->ohw", spec.kernel, win)
    return out + spec.bias[:, None, None]


def maxpool2d(x: np.ndarray, window, stride=None) -> np.ndarray:
    """Max pooling over [C,H,W] windows; no padding, stride defaults to window."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"maxpool2d input must be [C,H,W], got shape {x.shape}")
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ShapeError(f"window {kh}x{kw} / stride {sh}x{sw} must be >= 1")
    _, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"window {kh}x{kw} larger than input {h}x{w}")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    return win.max(axis=(-2, -1))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the token axis: [N,D] -> [D]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"global_avg_pool input must be [N,D], got shape {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("global_avg_pool needs at least one token")
    return x.mean(axis=0)


def affine(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, axis: int = -1) -> np.ndarray:
    """Per-channel x*scale + shift along the given axis."""
    x = np.asarray(x, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if scale.ndim != 1 or shift.ndim != 1 or scale.shape != shift.shape:
        raise ShapeError(
            f"scale/shift must be matching 1-D vectors, got {scale.shape} and {shift.shape}"
        )
    ax = axis % x.ndim
    if x.shape[ax] != scale.shape[0]:
        raise ShapeError(
            f"channel extent {x.shape[ax]} along axis {ax} does not match "
            f"scale length {scale.shape[0]}"
        )
    expand = [1] * x.ndim
    expand[ax] = scale.shape[0]
    return x * scale.reshape(expand) + shift.reshape(expand)
