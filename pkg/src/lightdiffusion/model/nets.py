"""Small U-shaped encoder-decoders for specular/shadow maps and light diffusion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ValidationError

LEAKY_SLOPE = 0.2
_BINOMIAL = torch.tensor([1.0, 2.0, 1.0])


@dataclass(frozen=True)
class NetConfig:
    encoder: tuple[int, ...] = (8, 16, 32)
    bottleneck: int = 32
    decoder: tuple[int, ...] = (32, 16, 8)
    in_channels: int = 4
    out_channels: int = 2

    def __post_init__(self):
        if len(self.encoder) != len(self.decoder) or not self.encoder:
            raise ValidationError("encoder and decoder need the same non-zero depth")
        counts = (*self.encoder, *self.decoder, self.bottleneck, self.in_channels, self.out_channels)
        if min(counts) < 1:
            raise ValidationError("all filter counts must be >= 1")

    @property
    def depth(self) -> int:
        return len(self.encoder)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


SPECSHADOW_CONFIG = NetConfig((8, 16, 32), 32, (32, 16, 8), 4, 2)
DIFFUSION_CONFIG = NetConfig((16, 32, 64), 64, (64, 32, 16), 7, 3)


def blur_pool(x: torch.Tensor) -> torch.Tensor:
    """Anti-aliased 2x downsampling: binomial 3x3 low-pass, then stride 2."""
    c = x.shape[1]
    k = torch.outer(_BINOMIAL, _BINOMIAL).to(x)
    k = (k / k.sum()).expand(c, 1, 3, 3)
    return F.conv2d(F.pad(x, (1, 1, 1, 1), mode="reflect"), k, stride=2, groups=c)


def upsample(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def _conv(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1)


class UNet(nn.Module):
    """3x3 convs with leaky ReLU, blur-pool down, bilinear-up + conv, concat skips."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.enc = nn.ModuleList()
        cin = config.in_channels
        for c in config.encoder:
            self.enc.append(_conv(cin, c))
            cin = c
        self.bottleneck = _conv(cin, config.bottleneck)
        cin = config.bottleneck
        self.dec = nn.ModuleList()
        for c, skip in zip(config.decoder, reversed(config.encoder)):
            self.dec.append(_conv(cin + skip, c))
            cin = c
        self.head = _conv(cin, config.out_channels)

    def check_input(self, x: torch.Tensor) -> None:
        m = 2 ** self.config.depth
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValidationError(
                f"expected (N, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        if x.shape[2] % m or x.shape[3] % m:
            raise ValidationError(f"spatial size {tuple(x.shape[2:])} must be a multiple of {m}")

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        skips = []
        for conv in self.enc:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
            skips.append(x)
            x = blur_pool(x)
        x = F.leaky_relu(self.bottleneck(x), LEAKY_SLOPE)
        for conv, skip in zip(self.dec, reversed(skips)):
            x = torch.cat([upsample(x), skip], dim=1)
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return self.head(x)


SIGMOID_MARGIN = 0.1


def scaled_sigmoid(x: torch.Tensor, clamp: bool = True) -> torch.Tensor:
    """``clamp((1 + 2m) sigmoid(x) - m, 0, 1)``.

    Unlike a bare sigmoid, 0 and 1 are reached at finite logits, so L1
    targets that sit exactly on the bounds do not drive logits to infinity.
    A zero logit maps to 0.5.
    """
    m = SIGMOID_MARGIN
    y = (1 + 2 * m) * torch.sigmoid(x) - m
    return y.clamp(0.0, 1.0) if clamp else y


class SpecShadowNet(UNet):
    """(RGB, alpha) -> (S, D) in [0, 1] through a scaled sigmoid."""

    def forward(self, x):
        return scaled_sigmoid(self.raw(x))

    def unclamped(self, x):
        """Head value before the final clamp, in ``(-m, 1 + m)``.

        Training fits this instead of the clamped output: once a pixel is
        clamped its gradient vanishes, and early Adam steps can clamp them all.
        """
        return scaled_sigmoid(self.raw(x), clamp=False)


def inverse_softplus(y: torch.Tensor) -> torch.Tensor:
    y = y.clamp_min(1e-4)
    return y + torch.log(-torch.expm1(-y))


class DiffusionNet(UNet):
    """(RGB, alpha, S, D, t) -> non-negative RGB.

    The head is a residual in softplus space,
    ``softplus(head(x) + softplus^-1(RGB))``, so a zero head is the identity.
    """

    def forward(self, x):
        return F.softplus(self.raw(x) + inverse_softplus(x[:, :3]))


class TintNet(nn.Module):
    """Three strided 3x3 convs, global average, linear head, exponential output."""

    def __init__(self, in_channels: int = 4, width: tuple[int, ...] = (16, 32, 32)):
        super().__init__()
        self.in_channels = in_channels
        self.width = tuple(width)
        layers = []
        cin = in_channels
        for c in width:
            layers.append(nn.Conv2d(cin, c, 3, stride=2, padding=1))
            cin = c
        self.convs = nn.ModuleList(layers)
        self.head = nn.Linear(cin, 3)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return torch.exp(self.head(x.mean(dim=(2, 3))))


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Fan-in scaled uniform init; the output layer starts at zero."""
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    with torch.no_grad():
        for name, sub in module.named_modules():
            if not isinstance(sub, (nn.Conv2d, nn.Linear)):
                continue
            if name == "head":
                sub.weight.zero_()
                sub.bias.zero_()
                continue
            fan_in = sub.weight[0].numel()
            bound = gain * math.sqrt(3.0 / fan_in)
            sub.weight.uniform_(-bound, bound, generator=generator)
            sub.bias.zero_()


def build_net(kind: str, config: NetConfig | None = None, seed: int = 0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    if kind == "specshadow":
        net = SpecShadowNet(config or SPECSHADOW_CONFIG)
    elif kind == "diffusion":
        net = DiffusionNet(config or DIFFUSION_CONFIG)
    elif kind == "tint":
        net = TintNet()
    else:
        raise ValidationError(f"unknown network kind {kind!r}")
    net = net.to(dtype)
    init_weights(net, g)
    return net
