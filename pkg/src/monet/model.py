"""Full model: attention network + component VAE behind one forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .attention import AttentionUNet, decompose, extend_slots
from .component_vae import ComponentVAE, reparameterize, reconstruct_masks
from .errors import ConfigurationError
from .objective import ObjectiveWeights, total_loss


@dataclass
class ModelConfig:
    """Architecture hyperparameters; everything needed to rebuild the networks."""

    image_hw: tuple[int, int] = (64, 64)
    num_slots: int = 5
    latent_dim: int = 16
    attention_channels: tuple[int, ...] = (32, 32, 64, 64, 64)
    attention_mlp_hidden: tuple[int, int] = (128, 128)
    encoder_channels: tuple[int, int, int, int] = (32, 32, 64, 64)
    encoder_mlp_hidden: int = 256
    decoder_channels: int = 32

    def __post_init__(self):
        if self.num_slots < 2:
            raise ConfigurationError(f"num_slots must be >= 2, got {self.num_slots}")
        self.image_hw = tuple(self.image_hw)
        self.attention_channels = tuple(self.attention_channels)
        self.attention_mlp_hidden = tuple(self.attention_mlp_hidden)
        self.encoder_channels = tuple(self.encoder_channels)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class MonetOutputs:
    """Everything one forward pass produces, slot axis second."""

    log_masks: torch.Tensor  # (B, K, H, W) attention masks, log space
    mu: torch.Tensor  # (B, K, D)
    log_sigma: torch.Tensor  # (B, K, D)
    z: torch.Tensor  # (B, K, D)
    rgb_means: torch.Tensor  # (B, K, 3, H, W)
    mask_logits: torch.Tensor  # (B, K, H, W)
    log_mtilde: torch.Tensor = field(init=False)  # (B, K, H, W) decoded masks, log space

    def __post_init__(self):
        self.log_mtilde = reconstruct_masks(self.mask_logits)


class MonetModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.attention = AttentionUNet(
            input_hw=config.image_hw,
            in_channels=4,
            block_channels=config.attention_channels,
            mlp_hidden=config.attention_mlp_hidden,
        )
        self.cvae = ComponentVAE(
            input_hw=config.image_hw,
            latent_dim=config.latent_dim,
            encoder_channels=config.encoder_channels,
            encoder_mlp_hidden=config.encoder_mlp_hidden,
            decoder_channels=config.decoder_channels,
        )

    def decompose(self, x: torch.Tensor, num_slots: int | None = None) -> torch.Tensor:
        return decompose(self.attention, x, num_slots or self.config.num_slots)

    def extend_slots(self, x: torch.Tensor, num_slots: int) -> torch.Tensor:
        return extend_slots(self.attention, x, num_slots)

    def encode_slots(self, x: torch.Tensor, log_masks: torch.Tensor):
        """Run the shared encoder over all slots at once.

        x: (B, 3, H, W), log_masks: (B, K, H, W) -> mu, log_sigma (B, K, D).
        """
        b, k, h, w = log_masks.shape
        x_rep = x.unsqueeze(1).expand(b, k, 3, h, w)
        flat = torch.cat([x_rep, log_masks.unsqueeze(2)], dim=2).reshape(b * k, 4, h, w)
        mu, log_sigma = self.cvae.encode(flat[:, :3], flat[:, 3:4])
        return mu.reshape(b, k, -1), log_sigma.reshape(b, k, -1)

    def decode_slots(self, z: torch.Tensor):
        """z: (B, K, D) -> rgb means (B, K, 3, H, W), mask logits (B, K, H, W)."""
        b, k, d = z.shape
        rgb, logit = self.cvae.decode(z.reshape(b * k, d))
        h, w = rgb.shape[-2:]
        return rgb.reshape(b, k, 3, h, w), logit.reshape(b, k, h, w)

    def forward(
        self,
        x: torch.Tensor,
        generator: torch.Generator | None = None,
        log_masks: torch.Tensor | None = None,
        num_slots: int | None = None,
    ) -> MonetOutputs:
        """Decompose (unless masks are provided), then encode/sample/decode each slot."""
        if log_masks is None:
            log_masks = self.decompose(x, num_slots)
        elif log_masks.shape[0] != x.shape[0] or log_masks.shape[-2:] != x.shape[-2:]:
            raise ConfigurationError(
                f"provided masks {tuple(log_masks.shape)} do not match images "
                f"{tuple(x.shape)}"
            )
        mu, log_sigma = self.encode_slots(x, log_masks)
        z = reparameterize(mu, log_sigma, generator)
        rgb_means, mask_logits = self.decode_slots(z)
        return MonetOutputs(
            log_masks=log_masks,
            mu=mu,
            log_sigma=log_sigma,
            z=z,
            rgb_means=rgb_means,
            mask_logits=mask_logits,
        )

    def compute_loss(self, x: torch.Tensor, outputs: MonetOutputs, weights: ObjectiveWeights):
        return total_loss(
            x,
            outputs.log_masks,
            outputs.mu,
            outputs.log_sigma,
            outputs.rgb_means,
            outputs.log_mtilde,
            weights,
        )
