"""Slot-wise component VAE: CNN encoder and spatial broadcast decoder.

One set of weights serves every slot.  The encoder reads the image
concatenated with a slot's log attention mask and produces a diagonal
Gaussian posterior; the decoder tiles the sampled latent over an
enlarged grid with two coordinate channels and shrinks back to the image
size through unpadded convolutions, emitting 3 RGB mean channels and one
mask logit.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import LOG_FLOOR
from .errors import ConfigurationError

LOG_SIGMA_CLAMP = 10.0  # |log sigma| bound; keeps KL and NLL finite early on


class ComponentEncoder(nn.Module):
    """Four stride-2 convolutions followed by a two-layer MLP posterior head."""

    def __init__(
        self,
        input_hw: tuple[int, int] = (64, 64),
        in_channels: int = 4,
        conv_channels: tuple[int, int, int, int] = (32, 32, 64, 64),
        mlp_hidden: int = 256,
        latent_dim: int = 16,
    ):
        super().__init__()
        h, w = input_hw
        if h < 8 or w < 8:
            raise ConfigurationError(
                f"encoder input {h}x{w} too small for 4 stride-2 layers (min 8x8)"
            )
        self.input_hw = (h, w)
        self.latent_dim = latent_dim

        convs = []
        ch = in_channels
        for out in conv_channels:
            convs.append(nn.Conv2d(ch, out, 3, stride=2, padding=1))
            ch = out
            h, w = (h + 1) // 2, (w + 1) // 2
        self.convs = nn.ModuleList(convs)
        self.feature_hw = (h, w)
        flat = conv_channels[-1] * h * w
        self.fc1 = nn.Linear(flat, mlp_hidden)
        self.fc2 = nn.Linear(mlp_hidden, 2 * latent_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(N, C, H, W) -> (mu, log_sigma), each (N, latent_dim)."""
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
        h = F.relu(self.fc1(h.flatten(1)))
        out = self.fc2(h)
        mu, log_sigma = out.chunk(2, dim=-1)
        return mu, torch.clamp(log_sigma, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)


class BroadcastDecoder(nn.Module):
    """Spatially tiled latent + coordinate channels through unpadded convs.

    The working grid is 8 larger than the output on each side; the four
    3x3 valid convolutions shave those 8 pixels back off and a final 1x1
    convolution maps to 4 channels (RGB means + mask logit).  Coordinate
    channels span [-1, 1] over the enlarged grid.
    """

    MARGIN = 8

    def __init__(
        self,
        out_hw: tuple[int, int] = (64, 64),
        latent_dim: int = 16,
        conv_channels: int = 32,
    ):
        super().__init__()
        h, w = out_hw
        if h < 1 or w < 1:
            raise ValueError(f"output size must be positive, got {h}x{w}")
        self.out_hw = (h, w)
        self.latent_dim = latent_dim
        gh, gw = h + self.MARGIN, w + self.MARGIN

        ys = torch.linspace(-1.0, 1.0, gh).view(1, 1, gh, 1).expand(1, 1, gh, gw)
        xs = torch.linspace(-1.0, 1.0, gw).view(1, 1, 1, gw).expand(1, 1, gh, gw)
        self.register_buffer("coords", torch.cat([xs, ys], dim=1), persistent=False)

        c = conv_channels
        self.convs = nn.ModuleList(
            [nn.Conv2d(latent_dim + 2, c, 3)]
            + [nn.Conv2d(c, c, 3) for _ in range(3)]
        )
        self.head = nn.Conv2d(c, 4, 1)

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(N, latent_dim) -> rgb means (N, 3, H, W) and mask logit (N, 1, H, W)."""
        n = z.shape[0]
        gh, gw = self.out_hw[0] + self.MARGIN, self.out_hw[1] + self.MARGIN
        grid = z.view(n, -1, 1, 1).expand(n, z.shape[1], gh, gw)
        h = torch.cat([grid, self.coords.expand(n, 2, gh, gw)], dim=1)
        for conv in self.convs:
            h = F.relu(conv(h))
        out = self.head(h)
        return out[:, :3], out[:, 3:4]


def reparameterize(
    mu: torch.Tensor, log_sigma: torch.Tensor, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Sample z = mu + exp(log_sigma) * eps with eps drawn from the given RNG."""
    eps = torch.randn(
        mu.shape, generator=generator, dtype=mu.dtype, device=mu.device
    )
    return mu + torch.exp(log_sigma) * eps


def reconstruct_masks(mask_logits: torch.Tensor) -> torch.Tensor:
    """Log-softmax of the per-slot mask logits across the slot axis (dim 1)."""
    if mask_logits.shape[1] < 2:
        raise ValueError("mask reconstruction needs at least 2 slots")
    return F.log_softmax(mask_logits, dim=1)


def unnormalized_slot_mask(mask_logit: torch.Tensor) -> torch.Tensor:
    """A single slot's mask read off its logit alone: sigmoid(logit).

    Used for visualisations where a component is shown in isolation,
    without normalising against the other slots.
    """
    return torch.sigmoid(mask_logit)


class ComponentVAE(nn.Module):
    """Encoder + broadcast decoder pair sharing one latent space across slots."""

    def __init__(
        self,
        input_hw: tuple[int, int] = (64, 64),
        latent_dim: int = 16,
        encoder_channels: tuple[int, int, int, int] = (32, 32, 64, 64),
        encoder_mlp_hidden: int = 256,
        decoder_channels: int = 32,
    ):
        super().__init__()
        self.latent_dim = latent_dim
        self.encoder = ComponentEncoder(
            input_hw,
            in_channels=4,
            conv_channels=encoder_channels,
            mlp_hidden=encoder_mlp_hidden,
            latent_dim=latent_dim,
        )
        self.decoder = BroadcastDecoder(input_hw, latent_dim, decoder_channels)

    def encode(self, x: torch.Tensor, log_mask: torch.Tensor):
        """Posterior for one slot batch: x (N, 3, H, W), log_mask (N, 1, H, W).

        The mask channel is floored at LOG_FLOOR so provided masks with
        zero entries cannot inject -inf into the convolution stack.
        """
        return self.encoder(torch.cat([x, torch.clamp(log_mask, min=LOG_FLOOR)], dim=1))

    def decode(self, z: torch.Tensor):
        return self.decoder(z)
