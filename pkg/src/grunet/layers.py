"""Shared layer helpers and seeded initialisation."""

import math

import torch
from torch import nn


class ConvBN(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size=3, activation=True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, padding=kernel_size // 2)
        self.bn = nn.BatchNorm2d(out_ch)
        self.activation = activation

    def forward(self, x):
        x = self.bn(self.conv(x))
        return torch.relu(x) if self.activation else x


def he_uniform_(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Uniform(-b, b), b = sqrt(6 / fan_in), for every conv/linear weight; zero biases.

    Parameters are visited in ``named_modules`` order so a given seed always
    yields the same weights.
    """
    for _, m in module.named_modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                # weight is (in, out, kh, kw); each output sees in*kh*kw inputs
                fan_in = w.shape[0] * w.shape[2] * w.shape[3]
            else:
                fan_in = w[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                nn.init.uniform_(w, -bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
    return module
