"""Training configuration for the desk-scale run."""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


LR_SCHEDULES = ("constant", "cosine")


@dataclass
class ArchConfig:
    """Architecture knobs; mirrors the engine's container config section.

    channels lists one output width per tokenizer stage; the last entry is
    the embedding dimension. Every stage is a 3x3/stride-1/pad-1 conv with a
    2x2 max pool, so an 8x8 input with two stages yields a 2x2 token grid.
    """

    image: tuple[int, int, int] = (1, 8, 8)
    channels: tuple[int, ...] = (16, 64)
    blocks: int = 1
    heads: int = 4
    mlp_ratio: float = 2.0
    classes: int = 10

    def __post_init__(self):
        self.image = tuple(int(v) for v in self.image)
        self.channels = tuple(int(v) for v in self.channels)
        if len(self.image) != 3 or min(self.image) < 1:
            raise ConfigError(f"image must be three positive extents, got {self.image}")
        if not self.channels or min(self.channels) < 1:
            raise ConfigError(f"need at least one positive conv width, got {self.channels}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(f"heads {self.heads} must divide embed_dim {self.embed_dim}")
        if self.mlp_ratio <= 0 or (self.embed_dim * self.mlp_ratio) % 1 != 0:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} must give a whole hidden width")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        h, w = self.token_grid
        if h < 1 or w < 1:
            raise ConfigError(f"pooling collapses the {self.image} image to {h}x{w}")

    @property
    def embed_dim(self) -> int:
        return self.channels[-1]

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    @property
    def token_grid(self) -> tuple[int, int]:
        _, h, w = self.image
        for _ in self.channels:
            # conv is size-preserving (3x3, stride 1, pad 1); pool halves
            h = (h - 2) // 2 + 1
            w = (w - 2) // 2 + 1
        return h, w

    @property
    def tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    def site_names(self) -> list[str]:
        """Activation sites in forward order, matching the engine's naming."""
        names = [f"tok{i}" for i in range(1, len(self.channels) + 1)]
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

    def container_config(self, quant_levels: int) -> dict:
        """Config section of the exported manifest."""
        return {
            "image": list(self.image),
            "conv_stages": [
                {"out_channels": c, "kernel": 3, "stride": 1, "padding": 1,
                 "maxpool": True, "pool": 2}
                for c in self.channels
            ],
            "embed_dim": self.embed_dim,
            "blocks": self.blocks,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "quant_levels": int(quant_levels),
            "classes": self.classes,
        }


@dataclass
class TrainConfig:
    dataset: str = "digits"
    epochs: int = 20
    batch_size: int = 64
    lr: float = 2e-3
    lr_schedule: str = "cosine"
    weight_decay: float = 1e-4
    quant_levels: int = 4
    val_fraction: float = 0.2
    seed: int = 0
    out: str = "runs/digits-ann"
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.quant_levels < 2:
            raise ConfigError(f"quant_levels must be >= 2, got {self.quant_levels}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr > 0.0):
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.dataset != "digits":
            raise ConfigError(f"only the bundled 'digits' dataset is wired up, got {self.dataset!r}")
