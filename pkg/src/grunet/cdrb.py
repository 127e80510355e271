"""Controlled Dense Residual Block: a dense Res path plus a gating controller.

Tensors are channels-first ``(B, C, H, W)`` like the rest of the package.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import ConvBN


class ResBlock(nn.Module):
    """``x + relu(bn(conv3x3(x)))``; identity shortcut keeps the path width fixed."""

    def __init__(self, width):
        super().__init__()
        self.body = ConvBN(width, width, 3, activation=True)

    def forward(self, x):
        return x + self.body(x)


class ResPath(nn.Module):
    """Chain of residual blocks placed on a skip connection.

    With ``dense=True`` block ``i >= 2`` also receives the outputs of every
    block before its direct predecessor (the path input counts as output 0),
    concatenated on channels and projected back to ``width`` by a 1x1 conv,
    then added to the predecessor's output.
    """

    def __init__(self, width, n_blocks, dense=True):
        super().__init__()
        if n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
        self.dense = dense
        self.blocks = nn.ModuleList(ResBlock(width) for _ in range(n_blocks))
        if dense:
            self.fuse = nn.ModuleList(
                nn.Conv2d(width * i, width, 1) for i in range(1, n_blocks)
            )

    def forward(self, x):
        outputs = [x]
        for i, block in enumerate(self.blocks):
            inp = outputs[-1]
            if self.dense and i >= 1:
                earlier = outputs[:-1]
                inp = inp + self.fuse[i - 1](torch.cat(earlier, dim=1))
            outputs.append(block(inp))
        return outputs[-1]


def gap(x: torch.Tensor) -> torch.Tensor:
    """Global average pooling ``(B, C, H, W) -> (B, C)``."""
    return x.mean(dim=(2, 3))


class Controller(nn.Module):
    """GAP -> Linear(C, C/2) -> ReLU -> Linear(C/2, 1) -> sigmoid, giving a per-sample gate of shape (B, 1)."""

    def __init__(self, channels):
        super().__init__()
        hidden = max(1, channels // 2)
        self.hidden = nn.Linear(channels, hidden)
        self.out = nn.Linear(hidden, 1)

    def forward(self, pooled):
        return torch.sigmoid(self.out(torch.relu(self.hidden(pooled))))


class CDRB(nn.Module):
    def __init__(self, width, n_blocks, use_controller=True, dense=True):
        super().__init__()
        self.res_path = ResPath(width, n_blocks, dense=dense)
        self.controller = Controller(width) if use_controller else None

    def forward(self, x, gate: torch.Tensor | None = None):
        """Res-path features scaled by the per-sample gate.

        ``gate`` of shape (B, 1) overrides the controller output; it is
        ignored when the block has no controller.
        """
        f = self.res_path(x)
        if self.controller is None:
            return f
        if gate is None:
            gate = self.controller(gap(f))
        return f * gate[:, :, None, None]
