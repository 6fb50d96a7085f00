"""Recurrent attention network and the scope/mask decomposition recursion.

The attention network sees the image concatenated with the current log
scope (4 input channels) and emits one logit per pixel.  A 2-way
log-softmax over [logit, 0] turns that into (log alpha, log(1 - alpha)),
which update the running log scope.  The recursion is carried out
entirely in log space so the K masks are normalised by construction.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

# Floor applied to log alpha / log(1 - alpha) before accumulation.  Keeps
# saturated attention from injecting -inf into the scope while leaving
# masses below ~1e-6 numerically invisible.  Shared with the objective.
LOG_FLOOR = -14.0


def _downsample2x(x: torch.Tensor) -> torch.Tensor:
    # nearest neighbour with src index 2*i: plain strided slicing
    return x[:, :, ::2, ::2]


def _upsample2x(x: torch.Tensor) -> torch.Tensor:
    return x.repeat_interleave(2, dim=2).repeat_interleave(2, dim=3)


class InstanceNorm(nn.Module):
    """Per-sample, per-channel spatial normalisation with a learned bias (no gain)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps) + self.bias.view(1, -1, 1, 1)


class UNetBlock(nn.Module):
    """3x3 bias-free conv, instance norm with learned bias, ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.norm = InstanceNorm(out_channels)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class AttentionUNet(nn.Module):
    """U-Net over [image, log scope] producing per-pixel attention logits.

    Both paths use the same block (conv/norm/ReLU) followed by a x2
    nearest-neighbour resize, except in the last block of each path.
    Skip tensors are collected after every down-block ReLU and
    concatenated (as [current, skip]) before each up-block convolution.
    A 3-layer MLP bridges the paths: it reads the flattened last skip
    tensor, applies ReLU after all three layers, and its output is
    reshaped back to the skip's shape and concatenated with it.

    The MLP ties the network to a fixed input size; the spatial size must
    be divisible by 2**(blocks - 1) so the resize chain round-trips.
    """

    def __init__(
        self,
        input_hw: tuple[int, int] = (64, 64),
        in_channels: int = 4,
        block_channels: tuple[int, ...] = (32, 32, 64, 64, 64),
        mlp_hidden: tuple[int, int] = (128, 128),
    ):
        super().__init__()
        if len(block_channels) < 2:
            raise ConfigurationError("attention U-Net needs at least 2 blocks per path")
        h, w = input_hw
        factor = 2 ** (len(block_channels) - 1)
        if h % factor or w % factor:
            raise ConfigurationError(
                f"input size {h}x{w} not divisible by 2^(blocks-1)={factor}; "
                "the resize chain would not round-trip"
            )
        self.input_hw = (h, w)
        self.in_channels = in_channels
        self.block_channels = tuple(block_channels)

        down = []
        ch = in_channels
        for out in block_channels:
            down.append(UNetBlock(ch, out))
            ch = out
        self.down_blocks = nn.ModuleList(down)

        bh, bw = h // factor, w // factor
        self.bottleneck_hw = (bh, bw)
        flat = block_channels[-1] * bh * bw
        self.mlp = nn.Sequential(
            nn.Linear(flat, mlp_hidden[0]),
            nn.ReLU(),
            nn.Linear(mlp_hidden[0], mlp_hidden[1]),
            nn.ReLU(),
            nn.Linear(mlp_hidden[1], flat),
            nn.ReLU(),
        )

        rev = block_channels[::-1]
        up = []
        for i, out in enumerate(rev):
            if i == 0:
                in_ch = 2 * block_channels[-1]  # [mlp output, last skip]
            else:
                in_ch = rev[i - 1] + block_channels[len(block_channels) - 1 - i]
            up.append(UNetBlock(in_ch, out))
        self.up_blocks = nn.ModuleList(up)
        self.head = nn.Conv2d(rev[-1], 1, 1)

        self.calls = 0  # forward-pass counter, used by mode-contract tests

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Map a (B, in_channels, H, W) input to (B, 1, H, W) logits."""
        if x.shape[-2:] != torch.Size(self.input_hw):
            raise ConfigurationError(
                f"expected {self.input_hw[0]}x{self.input_hw[1]} input, got "
                f"{x.shape[-2]}x{x.shape[-1]}"
            )
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"expected {self.in_channels} input channels, got {x.shape[1]}"
            )
        self.calls += 1

        n = len(self.down_blocks)
        skips = []
        h = x
        for i, block in enumerate(self.down_blocks):
            h = block(h)
            skips.append(h)
            if i < n - 1:
                h = _downsample2x(h)

        last = skips[-1]
        bridged = self.mlp(last.flatten(1)).reshape(last.shape)
        h = torch.cat([bridged, last], dim=1)

        for i, block in enumerate(self.up_blocks):
            if i > 0:
                h = torch.cat([h, skips[n - 1 - i]], dim=1)
            h = block(h)
            if i < n - 1:
                h = _upsample2x(h)
        return self.head(h)


def attention_step(
    net: AttentionUNet, x: torch.Tensor, log_scope: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """One attention pass: (log alpha, log(1 - alpha)) from image + log scope.

    Equivalent to a 2-way log-softmax over [logit, 0]; computed with
    log-sigmoid so both outputs stay finite at extreme logits.
    """
    if x.shape[-2:] != log_scope.shape[-2:]:
        raise ConfigurationError("image and log scope spatial sizes differ")
    logits = net(torch.cat([x, log_scope], dim=1))
    return F.logsigmoid(logits), F.logsigmoid(-logits)


def decompose(net: AttentionUNet, x: torch.Tensor, num_slots: int) -> torch.Tensor:
    """Run the autoregressive scope recursion, returning (B, K, H, W) log masks.

    log m_k = log s_{k-1} + log alpha_k and log s_k = log s_{k-1} +
    log(1 - alpha_k), starting from log s_0 = 0.  The final slot takes the
    remaining scope directly (no network call), so the masks sum to one at
    every pixel by construction.  The network runs exactly K - 1 times.
    """
    if num_slots < 2:
        raise ValueError(f"num_slots must be >= 2, got {num_slots}")
    b, _, h, w = x.shape
    log_scope = x.new_zeros((b, 1, h, w))
    log_masks = []
    for _ in range(num_slots - 1):
        log_alpha, log_other = attention_step(net, x, log_scope)
        log_alpha = torch.clamp(log_alpha, min=LOG_FLOOR)
        log_other = torch.clamp(log_other, min=LOG_FLOOR)
        log_masks.append(log_scope + log_alpha)
        log_scope = log_scope + log_other
    log_masks.append(log_scope)
    return torch.cat(log_masks, dim=1)


def extend_slots(net: AttentionUNet, x: torch.Tensor, num_slots: int) -> torch.Tensor:
    """Run a trained attention network for a different slot count.

    The network is recurrent and slot-count agnostic, so this is the same
    recursion as `decompose`, just unrolled `num_slots` times.
    """
    return decompose(net, x, num_slots)
