"""The three-term training loss, computed stably in log space.

Per pixel the reconstruction term is a K-component mixture: each slot
contributes its mask mass times a 3-channel diagonal Gaussian density
around its decoded RGB means (the three channels are combined inside the
component before the logsumexp, i.e. one mixture per pixel over joint
RGB).  Slot 0 is the background component and uses its own fixed scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .attention import LOG_FLOOR


@dataclass
class ObjectiveWeights:
    """Loss weights and fixed component scales."""

    beta: float = 0.5
    gamma: float = 0.5
    sigma_bg: float = 0.09
    sigma_fg: float = 0.11

    @classmethod
    def ablation(cls) -> "ObjectiveWeights":
        # provided-mask training: one scale for all slots, lighter mask term
        return cls(beta=0.5, gamma=0.25, sigma_bg=0.05, sigma_fg=0.05)


@dataclass
class LossBreakdown:
    nll: torch.Tensor
    latent_kl: torch.Tensor
    mask_kl: torch.Tensor
    total: torch.Tensor
    beta: float
    gamma: float
    sigma_bg: float
    sigma_fg: float


def mixture_nll(
    x: torch.Tensor,
    log_masks: torch.Tensor,
    rgb_means: torch.Tensor,
    sigma_bg: float,
    sigma_fg: float,
) -> torch.Tensor:
    """Negative log-likelihood of the pixel-wise slot mixture.

    x: (B, 3, H, W); log_masks: (B, K, H, W), entries in [-inf, 0];
    rgb_means: (B, K, 3, H, W).  Summed over pixels, averaged over the
    batch.  Slots with exactly zero mask mass (-inf log) drop out of the
    logsumexp, so their means cannot affect the result.
    """
    if sigma_bg <= 0 or sigma_fg <= 0:
        raise ValueError(f"component scales must be positive, got {sigma_bg}, {sigma_fg}")
    if log_masks.shape[1] != rgb_means.shape[1]:
        raise ValueError(
            f"slot count mismatch: {log_masks.shape[1]} masks vs "
            f"{rgb_means.shape[1]} component means"
        )
    k = log_masks.shape[1]
    sigma = x.new_tensor([sigma_bg] + [sigma_fg] * (k - 1)).view(1, k, 1, 1, 1)
    # per-slot joint log density over the 3 channels of a pixel
    log_dens = (
        -0.5 * math.log(2.0 * math.pi)
        - torch.log(sigma)
        - (x.unsqueeze(1) - rgb_means) ** 2 / (2.0 * sigma**2)
    ).sum(dim=2)
    log_px = torch.logsumexp(log_masks + log_dens, dim=1)
    return -log_px.sum(dim=(1, 2)).mean()


def latent_kl(mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """KL of the diagonal Gaussian posterior against a unit Gaussian prior.

    0.5 * sum(sigma^2 + mu^2 - 1 - 2 log sigma) over latent dims and
    slots, averaged over the batch.
    """
    kl = 0.5 * (torch.exp(2.0 * log_sigma) + mu**2 - 1.0 - 2.0 * log_sigma)
    return kl.reshape(kl.shape[0], -1).sum(dim=1).mean()


def mask_kl(log_masks: torch.Tensor, log_mtilde: torch.Tensor) -> torch.Tensor:
    """KL(attention mask distribution || decoded mask distribution) per pixel.

    sum_k m_k (log m_k - log mtilde_k), summed over pixels and slots,
    averaged over the batch.  Terms whose log mass is at or below the
    LOG_FLOOR (exact zeros included) contribute 0, the m*log m
    convention.
    """
    if log_masks.shape != log_mtilde.shape:
        raise ValueError(
            f"mask stacks differ in shape: {tuple(log_masks.shape)} vs "
            f"{tuple(log_mtilde.shape)}"
        )
    active = log_masks > LOG_FLOOR
    safe_log_m = torch.where(active, log_masks, torch.zeros_like(log_masks))
    terms = torch.exp(safe_log_m) * (safe_log_m - log_mtilde)
    terms = torch.where(active, terms, torch.zeros_like(terms))
    return terms.reshape(terms.shape[0], -1).sum(dim=1).mean()


def total_loss(
    x: torch.Tensor,
    log_masks: torch.Tensor,
    mu: torch.Tensor,
    log_sigma: torch.Tensor,
    rgb_means: torch.Tensor,
    log_mtilde: torch.Tensor,
    weights: ObjectiveWeights,
) -> LossBreakdown:
    """nll + beta * latent_kl + gamma * mask_kl, fully differentiable."""
    k = log_masks.shape[1]
    if not (mu.shape[1] == log_sigma.shape[1] == rgb_means.shape[1] == log_mtilde.shape[1] == k):
        raise ValueError(
            "slot count mismatch across loss inputs: "
            f"masks={k}, mu={mu.shape[1]}, log_sigma={log_sigma.shape[1]}, "
            f"means={rgb_means.shape[1]}, mtilde={log_mtilde.shape[1]}"
        )
    nll = mixture_nll(x, log_masks, rgb_means, weights.sigma_bg, weights.sigma_fg)
    lkl = latent_kl(mu, log_sigma)
    mkl = mask_kl(log_masks, log_mtilde)
    total = nll + weights.beta * lkl + weights.gamma * mkl
    return LossBreakdown(
        nll=nll,
        latent_kl=lkl,
        mask_kl=mkl,
        total=total,
        beta=weights.beta,
        gamma=weights.gamma,
        sigma_bg=weights.sigma_bg,
        sigma_fg=weights.sigma_fg,
    )
