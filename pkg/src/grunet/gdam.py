"""Gaussian distribution-based attention on the bottleneck, conditioned on text statistics."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

SEED_SIZE = 32


class GaussianParams(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


def _mean_var(x):
    if x.dim() < 2 or x[0].numel() == 0:
        raise ValueError(f"need a leading batch axis and at least one element per sample, got {tuple(x.shape)}")
    flat = x.reshape(x.shape[0], -1)
    mu = flat.mean(dim=1)
    return mu, ((flat - mu[:, None]) ** 2).mean(dim=1)


def feature_stats(x: torch.Tensor) -> GaussianParams:
    """Per-batch-element mean and population std over all non-batch axes."""
    mu, var = _mean_var(x)
    return GaussianParams(mu, torch.sqrt(var))


def fuse_gaussian(stats_f: GaussianParams, stats_t: GaussianParams) -> GaussianParams:
    """Means add, standard deviations add in quadrature (via hypot, so tiny sigmas do not underflow)."""
    return GaussianParams(stats_f.mu + stats_t.mu, torch.hypot(stats_t.sigma, stats_f.sigma))


def sample_seed_map(params: GaussianParams, shape=(SEED_SIZE, SEED_SIZE), train=True,
               generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw a (B, 1, h, w) seed map from N(mu, sigma).

    Training uses ``mu + sigma * eps`` so gradients reach both parameters.
    Inference sets eps to 0 and consumes no random numbers.
    """
    mu = params.mu.reshape(-1, 1, 1, 1)
    out_shape = (mu.shape[0], 1, *shape)
    if not train:
        return mu.expand(out_shape)
    sigma = params.sigma.reshape(-1, 1, 1, 1)
    eps = torch.randn(out_shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + sigma * eps


def resampling_steps(src: int, dst: int) -> int:
    """Signed number of x2 stages taking ``src`` to ``dst`` (positive = upsample)."""
    steps, size = 0, src
    if dst >= src:
        while size < dst:
            size *= 2
            steps += 1
    else:
        while size > dst:
            if size % 2:
                break
            size //= 2
            steps -= 1
    if size != dst:
        raise ValueError(f"bottleneck size {dst} is not reachable from seed size {src} by whole x2 steps")
    return steps


class GdAM(nn.Module):
    """Gate a bottleneck feature map with an attention map decoded from a fused Gaussian.

    The seed map is resampled from 32x32 to the bottleneck size with stride-2
    transposed convolutions (or stride-2 convolutions when the bottleneck is
    smaller), each followed by ReLU, then a 3x3 convolution with sigmoid emits
    the attention map. ``broadcast=True`` emits a single attention channel
    shared across all feature channels.
    """

    def __init__(self, channels, bottleneck_size, broadcast=False, seed_size=SEED_SIZE):
        super().__init__()
        self.seed_size = seed_size
        self.bottleneck_size = tuple(bottleneck_size)
        steps_h = resampling_steps(seed_size, self.bottleneck_size[0])
        steps_w = resampling_steps(seed_size, self.bottleneck_size[1])
        if steps_h != steps_w:
            raise ValueError(
                f"bottleneck {self.bottleneck_size} needs different resampling per axis from {seed_size}x{seed_size}"
            )
        hidden = max(1, channels // 2)
        layers = []
        in_ch = 1
        if steps_h == 0:
            layers += [nn.Conv2d(1, hidden, 1), nn.ReLU()]
        for _ in range(abs(steps_h)):
            if steps_h > 0:
                layers.append(nn.ConvTranspose2d(in_ch, hidden, 2, stride=2))
            else:
                layers.append(nn.Conv2d(in_ch, hidden, 3, stride=2, padding=1))
            layers.append(nn.ReLU())
            in_ch = hidden
        self.decode = nn.Sequential(*layers)
        self.attend = nn.Conv2d(hidden, 1 if broadcast else channels, 3, padding=1)

    def attention(self, f, t, generator=None):
        """Attention map in (0, 1) for bottleneck ``f`` (B, C, h, w) and projected text ``t`` (32, 32)."""
        if tuple(f.shape[2:]) != self.bottleneck_size:
            raise ValueError(f"expected bottleneck {self.bottleneck_size}, got {tuple(f.shape[2:])}")
        mu_f, var_f = _mean_var(f)
        mu_t, var_t = _mean_var(t.reshape(1, -1))
        # same fusion as fuse_gaussian, kept in variances so sigma = 0 has a finite gradient
        fused = GaussianParams(mu_f + mu_t, torch.sqrt(var_f + var_t))
        z = sample_seed_map(fused, (self.seed_size, self.seed_size), train=self.training, generator=generator)
        return torch.sigmoid(self.attend(self.decode(z)))

    def forward(self, f, t, generator=None):
        return self.attention(f, t, generator) * f
