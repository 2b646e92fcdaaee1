"""Quantization-aware torch twin of the engine's transformer.

The forward pass reproduces the inference engine's quantized analog model
step for step: conv tokenizer (conv -> BN -> quantized activation -> max
pool), then blocks whose attention and MLP branches quantize at the same
eight sites the engine names, softmax replaced by a ReLU-style quantizer on
scores scaled by 1/(tokens * sqrt(head_dim)), global average pool, linear
head. Training differences live only in the backward pass: rounding is
straight-through, the clip range masks gradients, and each step size learns
with the usual 1/sqrt(numel * levels) gradient scaling.

Rounding is half-up, floor(x + 0.5), to stay on the engine's grid exactly.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ArchConfig


def _round_half_up_ste(u: torch.Tensor) -> torch.Tensor:
    # forward: floor(u + 0.5); backward: identity
    return (torch.floor(u + 0.5) - u).detach() + u


def _grad_scale(s: torch.Tensor, scale: float) -> torch.Tensor:
    # forward: s; backward: grad * scale
    return (s - s * scale).detach() + s * scale


class ActQuant(nn.Module):
    """Learned-step activation quantizer onto the grid {0, s, ..., levels*s}.

    The step initializes itself from the first training batch as
    2 * E[|x|] / sqrt(levels), then learns by gradient.
    """

    def __init__(self, levels: int):
        super().__init__()
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.levels = levels
        self.step = nn.Parameter(torch.ones(()))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    def extra_repr(self) -> str:
        return f"levels={self.levels}"

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and not bool(self.initialized):
            with torch.no_grad():
                init = 2.0 * x.abs().mean() / math.sqrt(self.levels)
                self.step.fill_(torch.clamp(init, min=1e-6))
                self.initialized.fill_(True)
        if self.training:
            g = 1.0 / math.sqrt(x.numel() * self.levels)
            s = _grad_scale(self.step, g)
            u = torch.clamp(x / s, 0.0, float(self.levels))
            return s * _round_half_up_ste(u)
        s = self.step
        u = torch.clamp(x / s, 0.0, float(self.levels))
        return s * torch.floor(u + 0.5)


class TokenBatchNorm(nn.Module):
    """BatchNorm over the channel axis of [batch, tokens, dim] tensors."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.bn = nn.BatchNorm1d(dim, eps=eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        return self.bn(x.reshape(b * n, d)).reshape(b, n, d)


class TokenizerStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, levels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)
        self.act = ActQuant(levels)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.act(self.bn(self.conv(x))))


class Attention(nn.Module):
    def __init__(self, arch: ArchConfig, levels: int):
        super().__init__()
        d = arch.embed_dim
        self.heads = arch.heads
        self.head_dim = arch.head_dim
        self.score_denom = arch.tokens * math.sqrt(arch.head_dim)
        self.act_in = ActQuant(levels)
        self.proj_q = nn.Linear(d, d)
        self.proj_k = nn.Linear(d, d)
        self.proj_v = nn.Linear(d, d)
        self.proj_o = nn.Linear(d, d)
        self.bn_q = TokenBatchNorm(d)
        self.bn_k = TokenBatchNorm(d)
        self.bn_v = TokenBatchNorm(d)
        self.bn_o = TokenBatchNorm(d)
        self.act_q = ActQuant(levels)
        self.act_k = ActQuant(levels)
        self.act_v = ActQuant(levels)
        # one score quantizer per block, shared by every head
        self.act_score = ActQuant(levels)
        self.act_out = ActQuant(levels)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        return x.view(b, n, self.heads, self.head_dim).permute(0, 2, 1, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        xa = self.act_in(x)
        q = self.act_q(self.bn_q(self.proj_q(xa)))
        k = self.act_k(self.bn_k(self.proj_k(xa)))
        v = self.act_v(self.bn_v(self.proj_v(xa)))
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scores = qh @ kh.transpose(-1, -2)
        sq = self.act_score(scores / self.score_denom)
        out = (sq @ vh).permute(0, 2, 1, 3).reshape(x.shape)
        return self.bn_o(self.proj_o(self.act_out(out)))


class Mlp(nn.Module):
    def __init__(self, arch: ArchConfig, levels: int):
        super().__init__()
        d, hid = arch.embed_dim, arch.mlp_hidden
        self.act_in = ActQuant(levels)
        self.fc1 = nn.Linear(d, hid)
        self.bn1 = TokenBatchNorm(hid)
        self.act_mid = ActQuant(levels)
        self.fc2 = nn.Linear(hid, d)
        self.bn2 = TokenBatchNorm(d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act_mid(self.bn1(self.fc1(self.act_in(x))))
        return self.bn2(self.fc2(h))


class Block(nn.Module):
    def __init__(self, arch: ArchConfig, levels: int):
        super().__init__()
        self.att = Attention(arch, levels)
        self.mlp = Mlp(arch, levels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.att(x)
        return x + self.mlp(x)


class QatTransformer(nn.Module):
    """The trainable model; arch fixes the shape, levels the activation grid."""

    def __init__(self, arch: ArchConfig, levels: int):
        super().__init__()
        self.arch = arch
        self.levels = levels
        widths = (arch.image[0],) + arch.channels
        self.stages = nn.ModuleList(
            [TokenizerStage(widths[i], widths[i + 1], levels)
             for i in range(len(arch.channels))]
        )
        self.blocks = nn.ModuleList([Block(arch, levels) for _ in range(arch.blocks)])
        self.head = nn.Linear(arch.embed_dim, arch.classes)
        self._init_weights()

    def _init_weights(self) -> None:
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for stage in self.stages:
            x = stage(x)
        b, d = x.shape[0], self.arch.embed_dim
        tokens = x.reshape(b, d, -1).transpose(1, 2)
        for block in self.blocks:
            tokens = block(tokens)
        return self.head(tokens.mean(dim=1))

    def quantizers(self) -> dict[str, ActQuant]:
        """Site name -> quantizer, keyed exactly as the engine names sites."""
        table: dict[str, ActQuant] = {}
        for i, stage in enumerate(self.stages, start=1):
            table[f"tok{i}"] = stage.act
        for l, block in enumerate(self.blocks, start=1):
            att, mlp = block.att, block.mlp
            table[f"blk{l}.att.in"] = att.act_in
            table[f"blk{l}.att.q"] = att.act_q
            table[f"blk{l}.att.k"] = att.act_k
            table[f"blk{l}.att.v"] = att.act_v
            table[f"blk{l}.att.score"] = att.act_score
            table[f"blk{l}.att.out"] = att.act_out
            table[f"blk{l}.mlp.in"] = mlp.act_in
            table[f"blk{l}.mlp.mid"] = mlp.act_mid
        return table

    def param_groups(self, weight_decay: float) -> list[dict]:
        """Two groups: matrix weights decay, everything else does not.

        Biases, BN affine parameters, and quantizer steps are all scale-like
        scalars per channel; decaying them fights the calibration.
        """
        decay, plain = [], []
        for name, p in self.named_parameters():
            (decay if p.ndim >= 2 else plain).append(p)
        return [
            {"params": decay, "weight_decay": weight_decay},
            {"params": plain, "weight_decay": 0.0},
        ]
