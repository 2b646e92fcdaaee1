"""Softmax-free transformer built so it can be converted to a spiking network.

Layout: convolutional tokenizer -> transformer blocks (attention + MLP, both
with residual shortcuts) -> global average pool -> linear head. Every linear
map is followed by BatchNorm and fed through an activation site (ReLU in float
mode, lsq in quant mode). Attention replaces softmax with a ReLU whose input
is scaled by 1/(token count * sqrt(head dim)). Two bracketing exceptions: the
first conv consumes the raw image directly and the head reads the pooled
features without an activation in between. Max pooling, where enabled, sits
after the activation so it only ever sees quantized values.

No positional embedding: token identity is irrelevant to the pooled readout,
and logits are invariant to token permutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .quant import BNParams, QuantParams, lsq
from .tensor_ops import ConvSpec, affine, conv2d, global_avg_pool, matmul, maxpool2d

MODES = ("float", "quant")

SCORE_SCALE_MODES = ("explicit", "absorbed")


@dataclass
class ConvStageConfig:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    maxpool: bool = False
    pool: int = 2

    def to_dict(self) -> dict:
        return {
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "maxpool": self.maxpool,
            "pool": self.pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConvStageConfig":
        return cls(**d)


@dataclass
class ModelConfig:
    """Static architecture description; quantizer steps live on the model."""

    image: tuple[int, int, int]
    conv_stages: list[ConvStageConfig]
    embed_dim: int
    blocks: int
    heads: int
    mlp_ratio: float
    quant_levels: int
    classes: int

    def __post_init__(self):
        self.image = tuple(int(v) for v in self.image)
        self.conv_stages = [
            s if isinstance(s, ConvStageConfig) else ConvStageConfig.from_dict(s)
            for s in self.conv_stages
        ]
        self.validate()

    def validate(self) -> None:
        if len(self.image) != 3 or min(self.image) < 1:
            raise ConfigError(f"image extents must be three positive ints, got {self.image}")
        if not self.conv_stages:
            raise ConfigError("tokenizer needs at least one conv stage")
        for st in self.conv_stages:
            if st.out_channels < 1 or st.kernel < 1 or st.stride < 1 or st.padding < 0:
                raise ConfigError(f"bad conv stage {st}")
            if st.maxpool and st.pool < 2:
                raise ConfigError(f"pool window must be >= 2, got {st.pool}")
        if self.conv_stages[-1].out_channels != self.embed_dim:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must equal the last conv stage's "
                f"{self.conv_stages[-1].out_channels} channels"
            )
        if self.blocks < 1:
            raise ConfigError(f"need at least one block, got {self.blocks}")
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must divide evenly into {self.heads} heads"
            )
        if self.mlp_ratio <= 0 or (self.embed_dim * self.mlp_ratio) % 1 != 0:
            raise ConfigError(
                f"mlp_ratio {self.mlp_ratio} must scale embed_dim {self.embed_dim} "
                "to a whole number of hidden units"
            )
        if self.quant_levels < 1:
            raise ConfigError(f"quant_levels must be >= 1, got {self.quant_levels}")
        if self.classes < 2:
            raise ConfigError(f"need at least two classes, got {self.classes}")
        if min(self.token_grid) < 1:
            raise ConfigError(
                f"tokenizer collapses the {self.image} image to grid {self.token_grid}"
            )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def token_grid(self) -> tuple[int, int]:
        _, h, w = self.image
        for st in self.conv_stages:
            h = (h + 2 * st.padding - st.kernel) // st.stride + 1
            w = (w + 2 * st.padding - st.kernel) // st.stride + 1
            if st.maxpool:
                h = (h - st.pool) // st.pool + 1
                w = (w - st.pool) // st.pool + 1
        return h, w

    @property
    def tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    @property
    def num_maxpools(self) -> int:
        return sum(1 for st in self.conv_stages if st.maxpool)

    def site_names(self) -> list[str]:
        """Activation sites in forward order; one quantizer / neuron layer each."""
        names = [f"tok{i}" for i in range(1, len(self.conv_stages) + 1)]
        for l in range(1, self.blocks + 1):
            names += [
                f"blk{l}.att.in",
                f"blk{l}.att.q",
                f"blk{l}.att.k",
                f"blk{l}.att.v",
                f"blk{l}.att.score",
                f"blk{l}.att.out",
                f"blk{l}.mlp.in",
                f"blk{l}.mlp.mid",
            ]
        return names

    def to_dict(self) -> dict:
        return {
            "image": list(self.image),
            "conv_stages": [s.to_dict() for s in self.conv_stages],
            "embed_dim": self.embed_dim,
            "blocks": self.blocks,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "quant_levels": self.quant_levels,
            "classes": self.classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            image=tuple(d["image"]),
            conv_stages=[ConvStageConfig.from_dict(s) for s in d["conv_stages"]],
            embed_dim=int(d["embed_dim"]),
            blocks=int(d["blocks"]),
            heads=int(d["heads"]),
            mlp_ratio=float(d["mlp_ratio"]),
            quant_levels=int(d["quant_levels"]),
            classes=int(d["classes"]),
        )

    @classmethod
    def cifar_style(cls, embed_dim: int = 384, blocks: int = 4, heads: int = 8,
                    quant_levels: int = 4, classes: int = 10) -> "ModelConfig":
        """32x32 recipe: 4 conv stages, max pooling in the last two only."""
        ramp = [max(8, embed_dim // 8), max(8, embed_dim // 4), embed_dim // 2, embed_dim]
        stages = [
            ConvStageConfig(ramp[0]),
            ConvStageConfig(ramp[1]),
            ConvStageConfig(ramp[2], maxpool=True),
            ConvStageConfig(ramp[3], maxpool=True),
        ]
        return cls((3, 32, 32), stages, embed_dim, blocks, heads, 4.0, quant_levels, classes)

    @classmethod
    def imagenet_style(cls, embed_dim: int = 512, blocks: int = 8, heads: int = 8,
                       quant_levels: int = 4, classes: int = 1000) -> "ModelConfig":
        """224x224 recipe: four 2x poolings, 16x16 patches, 196 tokens."""
        ramp = [max(8, embed_dim // 8), max(8, embed_dim // 4), embed_dim // 2, embed_dim]
        stages = [ConvStageConfig(c, maxpool=True) for c in ramp]
        return cls((3, 224, 224), stages, embed_dim, blocks, heads, 4.0, quant_levels, classes)


@dataclass
class TokenizerStage:
    conv: ConvSpec
    bn: BNParams | None
    site: str
    pool: int | None = None


@dataclass
class AttentionParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    bn_q: BNParams | None
    bn_k: BNParams | None
    bn_v: BNParams | None
    bn_o: BNParams | None


@dataclass
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    bn1: BNParams | None
    bn2: BNParams | None


@dataclass
class Block:
    name: str
    attn: AttentionParams
    mlp: MlpParams


@dataclass
class Head:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class TransformerModel:
    config: ModelConfig
    tokenizer: list[TokenizerStage]
    blocks: list[Block]
    head: Head
    sites: dict[str, QuantParams] = field(default_factory=dict)

    def bn_count(self) -> int:
        n = sum(1 for st in self.tokenizer if st.bn is not None)
        for blk in self.blocks:
            n += sum(
                1
                for bn in (blk.attn.bn_q, blk.attn.bn_k, blk.attn.bn_v, blk.attn.bn_o,
                           blk.mlp.bn1, blk.mlp.bn2)
                if bn is not None
            )
        return n

    def quant_ready(self) -> bool:
        return all(name in self.sites for name in self.config.site_names())


def nrelu(x: np.ndarray, n: int) -> np.ndarray:
    """ReLU of x scaled by 1/n; the softmax replacement (n = token count)."""
    if n < 1:
        raise ValueError(f"normalizer must be >= 1, got {n}")
    return np.maximum(np.asarray(x, dtype=np.float64) / n, 0.0)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    # resample anything past 2 sigma so the tails stay bounded
    while True:
        mask = np.abs(out) > 2.0
        k = int(mask.sum())
        if k == 0:
            break
        out[mask] = rng.standard_normal(k)
    return out * std


def build_model(config: ModelConfig, seed: int) -> TransformerModel:
    """Deterministic random model: truncated-normal weights (std 0.02), zero
    biases, identity BN, quantizer steps calibrated on a seeded random batch."""
    rng = np.random.default_rng(seed)
    in_ch = config.image[0]
    tokenizer = []
    for i, st in enumerate(config.conv_stages, start=1):
        kernel = _trunc_normal(rng, (st.out_channels, in_ch, st.kernel, st.kernel))
        spec = ConvSpec(kernel, np.zeros(st.out_channels), (st.stride, st.stride),
                        (st.padding, st.padding))
        tokenizer.append(
            TokenizerStage(spec, BNParams.identity(st.out_channels), f"tok{i}",
                           st.pool if st.maxpool else None)
        )
        in_ch = st.out_channels

    d, hid = config.embed_dim, config.mlp_hidden
    blocks = []
    for l in range(1, config.blocks + 1):
        attn = AttentionParams(
            wq=_trunc_normal(rng, (d, d)), bq=np.zeros(d),
            wk=_trunc_normal(rng, (d, d)), bk=np.zeros(d),
            wv=_trunc_normal(rng, (d, d)), bv=np.zeros(d),
            wo=_trunc_normal(rng, (d, d)), bo=np.zeros(d),
            bn_q=BNParams.identity(d), bn_k=BNParams.identity(d),
            bn_v=BNParams.identity(d), bn_o=BNParams.identity(d),
        )
        mlp = MlpParams(
            w1=_trunc_normal(rng, (d, hid)), b1=np.zeros(hid),
            w2=_trunc_normal(rng, (hid, d)), b2=np.zeros(d),
            bn1=BNParams.identity(hid), bn2=BNParams.identity(d),
        )
        blocks.append(Block(f"blk{l}", attn, mlp))

    head = Head(weight=_trunc_normal(rng, (d, config.classes)), bias=np.zeros(config.classes))
    model = TransformerModel(config, tokenizer, blocks, head)
    calib = rng.standard_normal((4,) + config.image)
    calibrate_steps(model, calib)
    return model


def calibrate_steps(model: TransformerModel, images: np.ndarray) -> None:
    """Set each site's step to 2*E[|input|]/sqrt(levels) over a float-mode batch."""
    levels = model.config.quant_levels
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for image in images:
        rec_in: dict[str, np.ndarray] = {}
        forward(model, image, "float", _rec_in=rec_in)
        for site, x in rec_in.items():
            sums[site] = sums.get(site, 0.0) + float(np.abs(x).sum())
            counts[site] = counts.get(site, 0) + x.size
    for site in model.config.site_names():
        mean_abs = sums[site] / counts[site]
        if mean_abs <= 0.0:
            raise ConfigError(f"calibration batch produced all-zero input at site {site}")
        model.sites[site] = QuantParams(2.0 * mean_abs / math.sqrt(levels), levels)


def _activate(model: TransformerModel, x: np.ndarray, site: str, mode: str,
              rec_in, rec_out) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values entering site {site}")
    if rec_in is not None:
        rec_in[site] = x.copy()
    if mode == "float":
        y = np.maximum(x, 0.0)
    else:
        q = model.sites.get(site)
        if q is None:
            raise ConfigError(f"quant mode needs a calibrated step for site {site}")
        y = lsq(x, q)
    if rec_out is not None:
        rec_out[site] = y.copy()
    return y


def tokenize(model: TransformerModel, image: np.ndarray, mode: str,
             rec_in=None, rec_out=None) -> np.ndarray:
    """Image [C,H,W] -> token matrix [N, D]; the first conv eats the raw image."""
    x = np.asarray(image, dtype=np.float64)
    if x.shape != model.config.image:
        raise ShapeError(f"image shape {x.shape} does not match config {model.config.image}")
    for stage in model.tokenizer:
        x = conv2d(x, stage.conv)
        if stage.bn is not None:
            scale, shift = stage.bn.scale_shift()
            x = affine(x, scale, shift, axis=0)
        x = _activate(model, x, stage.site, mode, rec_in, rec_out)
        if stage.pool:
            x = maxpool2d(x, stage.pool)
    return x.reshape(model.config.embed_dim, -1).T


def _split_heads(x: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    n = x.shape[0]
    return x.reshape(n, heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dk)


def attention_forward(x: np.ndarray, block: Block, model: TransformerModel, mode: str,
                      rec_in=None, rec_out=None, score_scale: str = "explicit") -> np.ndarray:
    """Residual branch of one attention block (caller adds the shortcut).

    score_scale picks where the 1/(N*sqrt(dk)) factor is applied: "explicit"
    divides the raw scores before the activation; "absorbed" rescales the
    quantizer step instead and divides afterwards. Both compute the same map.
    """
    cfg = model.config
    att = block.attn
    pre = f"{block.name}.att"
    xa = _activate(model, x, f"{pre}.in", mode, rec_in, rec_out)

    def projection(w, b, bn, site):
        y = matmul(xa, w) + b
        if bn is not None:
            scale, shift = bn.scale_shift()
            y = affine(y, scale, shift, axis=-1)
        return _activate(model, y, site, mode, rec_in, rec_out)

    q = projection(att.wq, att.bq, att.bn_q, f"{pre}.q")
    k = projection(att.wk, att.bk, att.bn_k, f"{pre}.k")
    v = projection(att.wv, att.bv, att.bn_v, f"{pre}.v")

    n = x.shape[0]
    qh = _split_heads(q, cfg.heads, cfg.head_dim)
    kh = _split_heads(k, cfg.heads, cfg.head_dim)
    vh = _split_heads(v, cfg.heads, cfg.head_dim)
    scores = qh @ kh.transpose(0, 2, 1)
    denom = n * math.sqrt(cfg.head_dim)
    site_score = f"{pre}.score"
    if score_scale == "explicit":
        sq = _activate(model, scores / denom, site_score, mode, rec_in, rec_out)
    elif score_scale == "absorbed":
        if not np.all(np.isfinite(scores)):
            raise NumericError(f"non-finite values entering site {site_score}")
        if rec_in is not None:
            rec_in[site_score] = scores / denom
        if mode == "float":
            sq = np.maximum(scores, 0.0) / denom
        else:
            q_site = model.sites.get(site_score)
            if q_site is None:
                raise ConfigError(f"quant mode needs a calibrated step for site {site_score}")
            sq = lsq(scores, QuantParams(q_site.step * denom, q_site.levels)) / denom
        if rec_out is not None:
            rec_out[site_score] = sq.copy()
    else:
        raise ConfigError(f"score_scale must be one of {SCORE_SCALE_MODES}, got {score_scale}")

    out = _merge_heads(sq @ vh)
    oq = _activate(model, out, f"{pre}.out", mode, rec_in, rec_out)
    p = matmul(oq, att.wo) + att.bo
    if att.bn_o is not None:
        scale, shift = att.bn_o.scale_shift()
        p = affine(p, scale, shift, axis=-1)
    return p


def mlp_forward(x: np.ndarray, block: Block, model: TransformerModel, mode: str,
                rec_in=None, rec_out=None) -> np.ndarray:
    """Residual branch of one MLP block (caller adds the shortcut)."""
    mlp = block.mlp
    pre = f"{block.name}.mlp"
    xa = _activate(model, x, f"{pre}.in", mode, rec_in, rec_out)
    h1 = matmul(xa, mlp.w1) + mlp.b1
    if mlp.bn1 is not None:
        scale, shift = mlp.bn1.scale_shift()
        h1 = affine(h1, scale, shift, axis=-1)
    ha = _activate(model, h1, f"{pre}.mid", mode, rec_in, rec_out)
    h2 = matmul(ha, mlp.w2) + mlp.b2
    if mlp.bn2 is not None:
        scale, shift = mlp.bn2.scale_shift()
        h2 = affine(h2, scale, shift, axis=-1)
    return h2


def forward_tokens(model: TransformerModel, tokens: np.ndarray, mode: str,
                   rec_in=None, rec_out=None, score_scale: str = "explicit") -> np.ndarray:
    x = tokens
    for block in model.blocks:
        x = attention_forward(x, block, model, mode, rec_in, rec_out, score_scale) + x
        x = mlp_forward(x, block, model, mode, rec_in, rec_out) + x
    pooled = global_avg_pool(x)
    return pooled @ model.head.weight + model.head.bias


def forward(model: TransformerModel, image: np.ndarray, mode: str,
            record_sites: bool = False, score_scale: str = "explicit",
            _rec_in=None):
    """Full forward pass -> logits [classes]; record_sites also returns the
    post-activation value of every site."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    rec_out = {} if record_sites else None
    tokens = tokenize(model, image, mode, _rec_in, rec_out)
    logits = forward_tokens(model, tokens, mode, _rec_in, rec_out, score_scale)
    if record_sites:
        return logits, rec_out
    return logits
