"""Building blocks shared by the flow forecaster and the mask warper."""
from __future__ import annotations

from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F


def double_conv(cin: int, cmid: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cmid, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cmid, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class DecoderBlock(nn.Module):
    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cskip, 2, stride=2)
        self.conv = double_conv(2 * cskip, cskip, cout)

    def forward(self, x, skip):
        return self.conv(torch.cat([skip, self.up(x)], dim=1))


class UNet(nn.Module):
    """Encoder-decoder with skip connections, without a prediction layer.

    ``depth`` is the number of 2x poolings; widths double per level starting at
    ``base``.  The last decoder block emits ``out_channels`` ReLU features at
    input resolution.  Blocks are registered in data-flow order
    (``enc0 .. enc{depth}``, ``dec{depth-1} .. dec0``) so suffixes of
    :meth:`block_names` are the layers closest to the output.
    """

    def __init__(self, in_channels: int, base: int, depth: int, out_channels: int):
        super().__init__()
        self.depth = depth
        widths = [base * 2 ** k for k in range(depth + 1)]
        self.blocks = nn.ModuleDict()
        self.blocks["enc0"] = double_conv(in_channels, widths[0], widths[0])
        for k in range(1, depth + 1):
            self.blocks[f"enc{k}"] = double_conv(widths[k - 1], widths[k], widths[k])
        for k in reversed(range(depth)):
            cout = out_channels if k == 0 else widths[k]
            self.blocks[f"dec{k}"] = DecoderBlock(widths[k + 1], widths[k], cout)

    def block_names(self) -> List[str]:
        return list(self.blocks.keys())

    def forward(self, x):
        skips = []
        for k in range(self.depth + 1):
            if k:
                x = F.max_pool2d(x, 2)
            x = self.blocks[f"enc{k}"](x)
            skips.append(x)
        for k in reversed(range(self.depth)):
            x = self.blocks[f"dec{k}"](x, skips[k])
        return x


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels,
                              kernel_size, padding=kernel_size // 2)

    def init_hidden(self, batch: int, height: int, width: int, like: torch.Tensor):
        z = like.new_zeros(batch, self.hidden_channels, height, width)
        return z, z.clone()

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.split(self.conv(torch.cat([x, h], dim=1)), self.hidden_channels, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


def init_weights(module: nn.Module) -> None:
    """He-uniform convolutions, orthogonal recurrent kernels, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        if isinstance(m, ConvLSTMCell):
            w = m.conv.weight  # (4H, Cin + H, k, k)
            with torch.no_grad():
                rec = torch.empty(w.shape[0], m.hidden_channels * w.shape[2] * w.shape[3],
                                  dtype=w.dtype)
                nn.init.orthogonal_(rec)
                w[:, m.in_channels:] = rec.view(w.shape[0], m.hidden_channels, *w.shape[2:])
