"""MultiResUNet backbone with CDRB skip connections and a GdAM-gated bottleneck.

All modules work on channels-first tensors ``(B, C, H, W)``. ``model_forward``
accepts and returns channels-last ``(B, H, W, C)`` arrays for callers that
keep images in that layout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import torch
from torch import nn

from .cdrb import CDRB
from .gdam import GdAM
from .layers import ConvBN, he_uniform_
from .text import TextProjection

VARIANTS = ("baseline", "cdrb_no_controller", "cdrb", "full")
# ablation row labels, in table order
VARIANT_ROWS = {"baseline": "(i)", "cdrb_no_controller": "(ii)", "cdrb": "(iii)", "full": "(iv)"}


class ConfigError(ValueError):
    pass


class MissingTextError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_height: int = 512
    input_width: int = 512
    input_channels: int = 3
    depth: int = 4
    base_width: int = 32
    alpha: float = 1.67
    variant: str = "full"
    seed: int = 0
    text_dim: int = 64
    res_blocks: list[int] | None = None
    gdam_broadcast: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        step = 2 ** self.depth
        if self.input_height % step or self.input_width % step:
            raise ConfigError(
                f"input {self.input_height}x{self.input_width} not divisible by 2**depth = {step}"
            )
        if self.res_blocks is None:
            self.res_blocks = [self.depth - level for level in range(self.depth)]
        self.res_blocks = [int(n) for n in self.res_blocks]
        if len(self.res_blocks) != self.depth or min(self.res_blocks) < 1:
            raise ConfigError(f"res_blocks must list {self.depth} counts >= 1, got {self.res_blocks}")
        if self.text_dim < 1:
            raise ConfigError(f"text_dim must be >= 1, got {self.text_dim}")
        for level in range(self.depth + 1):
            if self.level_width(level) < 3:
                raise ConfigError(f"level {level} width {self.level_width(level)} < 3; raise base_width or alpha")

    def level_width(self, level: int) -> int:
        return int(self.alpha * self.base_width * 2 ** level)

    @property
    def bottleneck_size(self):
        return (self.input_height >> self.depth, self.input_width >> self.depth)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def branch_split(width: int) -> tuple[int, int, int]:
    """Roughly W/6, W/3, W/2 channels for the three chained convolutions, summing to W."""
    if width < 3:
        raise ConfigError(f"MRB width must be >= 3, got {width}")
    a = max(1, round(width / 6))
    b = max(1, round(width / 3))
    return a, b, width - a - b


class MultiResBlock(nn.Module):
    """relu(bn(concat(c1, c2, c3) + shortcut)) with c1 -> c2 -> c3 chained 3x3 convs and a 1x1 shortcut."""

    def __init__(self, in_ch, width, split=None):
        super().__init__()
        split = tuple(split) if split is not None else branch_split(width)
        if len(split) != 3 or min(split) < 1:
            raise ConfigError(f"branch split must be three positive widths, got {split}")
        self.out_channels = sum(split)
        self.conv3 = ConvBN(in_ch, split[0])
        self.conv5 = ConvBN(split[0], split[1])
        self.conv7 = ConvBN(split[1], split[2])
        self.shortcut = ConvBN(in_ch, self.out_channels, kernel_size=1, activation=False)
        self.bn = nn.BatchNorm2d(self.out_channels)

    def forward(self, x):
        a = self.conv3(x)
        b = self.conv5(a)
        c = self.conv7(b)
        cat = torch.cat([a, b, c], dim=1)
        short = self.shortcut(x)
        if short.shape != cat.shape:
            raise ConfigError(f"shortcut shape {tuple(short.shape)} != branch shape {tuple(cat.shape)}")
        return torch.relu(self.bn(cat + short))


class GRUNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        variant = cfg.variant
        widths = [cfg.level_width(level) for level in range(cfg.depth + 1)]

        self.encoders = nn.ModuleList()
        self.skips = nn.ModuleList()
        in_ch = cfg.input_channels
        for level in range(cfg.depth):
            self.encoders.append(MultiResBlock(in_ch, widths[level]))
            # baseline keeps the plain MultiResUNet Res path
            self.skips.append(CDRB(widths[level], cfg.res_blocks[level],
                                   use_controller=variant in ("cdrb", "full"),
                                   dense=variant != "baseline"))
            in_ch = widths[level]
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = MultiResBlock(widths[-2], widths[-1])

        if variant == "full":
            self.text_projection = TextProjection(cfg.text_dim)
            self.gdam = GdAM(widths[-1], cfg.bottleneck_size, broadcast=cfg.gdam_broadcast)
        else:
            self.text_projection = None
            self.gdam = None

        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(cfg.depth)):
            up_ch = cfg.base_width * 2 ** level
            self.ups.append(nn.ConvTranspose2d(widths[level + 1], up_ch, 2, stride=2))
            self.decoders.append(MultiResBlock(up_ch + widths[level], widths[level]))
        self.head = nn.Conv2d(widths[0], 1, 1)

        he_uniform_(self, torch.Generator().manual_seed(cfg.seed))

    def forward(self, image, text=None, generator=None, return_features=False):
        """Probability map (B, 1, H, W) for ``image`` (B, C, H, W).

        ``text`` is the raw (16, N) label embedding matrix, required for the
        full variant. In training mode GdAM draws noise from ``generator``,
        defaulting to a fresh generator seeded with ``cfg.seed``.
        """
        cfg = self.cfg
        expected = (cfg.input_channels, cfg.input_height, cfg.input_width)
        if tuple(image.shape[1:]) != expected:
            raise ConfigError(f"image shape {tuple(image.shape[1:])} (C, H, W) != configured {expected}")
        if self.gdam is not None and text is None:
            raise MissingTextError("variant 'full' needs the label embedding matrix")

        features = {}
        skips = []
        x = image
        for level, (enc, skip) in enumerate(zip(self.encoders, self.skips), start=1):
            x = enc(x)
            features[f"encoder_{level}"] = x
            skips.append(skip(x))
            x = self.pool(x)
        x = self.bottleneck(x)
        features["bottleneck"] = x

        if self.gdam is not None:
            if self.training and generator is None:
                generator = torch.Generator(device=x.device).manual_seed(cfg.seed)
            t = self.text_projection(text.to(dtype=x.dtype, device=x.device))
            attn = self.gdam.attention(x, t, generator=generator)
            features["gdam_attention"] = attn
            x = attn * x

        for level, (up, dec, skip) in enumerate(zip(self.ups, self.decoders, reversed(skips))):
            x = dec(torch.cat([up(x), skip], dim=1))
            features[f"decoder_{cfg.depth - level}"] = x
        out = torch.sigmoid(self.head(x))
        if return_features:
            return out, features
        return out


def model_forward(model: GRUNet, image_bhwc, text=None, generator=None) -> torch.Tensor:
    """Channels-last wrapper: (B, H, W, C) in, (B, H, W, 1) out."""
    image = torch.as_tensor(image_bhwc)
    if image.dim() != 4:
        raise ConfigError(f"expected a rank-4 (B, H, W, C) image, got shape {tuple(image.shape)}")
    out = model(image.permute(0, 3, 1, 2), text=text, generator=generator)
    return out.permute(0, 2, 3, 1)


def mrb_forward(x_bhwc, level_width, split=None, seed=0):
    """Run a freshly initialised MRB on a channels-last input."""
    x = torch.as_tensor(x_bhwc)
    block = MultiResBlock(x.shape[-1], level_width, split).to(x.dtype)
    he_uniform_(block, torch.Generator().manual_seed(seed))
    return block(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
