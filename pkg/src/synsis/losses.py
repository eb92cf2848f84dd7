"""Training objectives: non-saturating adversarial losses for the whole-image
discriminator and the feature-space ensemble, and the patchwise perceptual
alignment loss against the synthetic guide image.

Discriminator outputs are raw logits; the log-sigmoid objectives are
evaluated in numerically stable softplus form:

    -log sigmoid(t)       = softplus(-t)
    -log (1 - sigmoid(t)) = softplus(t)

Expectations over per-pixel logit maps use mean reduction.
"""

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


def _check_finite(name, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError(f"{name}: non-finite values in input tensor")


def disc_logistic_loss(logits_real: torch.Tensor, logits_fake: torch.Tensor) -> torch.Tensor:
    """-E[log sigmoid(D(real))] - E[log(1 - sigmoid(D(fake)))]."""
    _check_finite("disc_logistic_loss", logits_real, logits_fake)
    return F.softplus(-logits_real).mean() + F.softplus(logits_fake).mean()


def disc_loss_ensemble(d_l, feat_real: torch.Tensor, feat_fake: torch.Tensor) -> torch.Tensor:
    """Adversarial loss of one feature discriminator. `feat_fake` must be
    detached from the generator graph by the caller."""
    _check_finite("disc_loss_ensemble", feat_real, feat_fake)
    return disc_logistic_loss(d_l(feat_real), d_l(feat_fake))


def disc_loss_whole(d_u, x_real: torch.Tensor, x_fake: torch.Tensor) -> torch.Tensor:
    """Adversarial loss of the whole-image discriminator."""
    _check_finite("disc_loss_whole", x_real, x_fake)
    return disc_logistic_loss(d_u(x_real), d_u(x_fake))


def gen_adv_loss(d_u, ensemble, x_fake: torch.Tensor, feat_fake: dict) -> torch.Tensor:
    """-E[log sigmoid(D_u(fake)) + sum_l log sigmoid(D_l(feat_l(fake)))].

    `feat_fake` maps layer id -> fake features (gradients intact so the
    generator receives them through both discriminator routes).
    """
    _check_finite("gen_adv_loss", x_fake, *feat_fake.values())
    loss = F.softplus(-d_u(x_fake)).mean()
    for layer_id, feat in feat_fake.items():
        loss = loss + F.softplus(-ensemble(layer_id, feat)).mean()
    return loss


def channel_normalize(feat: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    """Scale every spatial position to unit norm across channels."""
    return feat / feat.square().sum(dim=1, keepdim=True).clamp_min(eps).sqrt()


def lpips_patch_align(extractor, x_syn: torch.Tensor, x_gen: torch.Tensor,
                      grid_k: int, syn_features: dict = None) -> torch.Tensor:
    """Patchwise perceptual distance between the synthetic guide and the
    generated image: sum over backbone layers of the mean squared difference
    of channel-normalized patch features. The patch operator is applied once,
    before feature extraction.

    `syn_features` may carry precomputed phi(x_syn, grid_k) (the training loop
    caches them); they are treated as constants either way.
    """
    if x_syn.shape != x_gen.shape:
        raise ValueError(
            f"shape mismatch: synthetic {tuple(x_syn.shape)} vs generated {tuple(x_gen.shape)}"
        )
    _check_finite("lpips_patch_align", x_syn, x_gen)
    if syn_features is None:
        with torch.no_grad():
            syn_features = extractor.phi(x_syn, grid_k)
    gen_features = extractor.phi(x_gen, grid_k)
    loss = x_gen.new_zeros(())
    for layer_id, syn_feat in syn_features.items():
        diff = channel_normalize(syn_feat.detach()) - channel_normalize(gen_features[layer_id])
        loss = loss + diff.square().mean()
    return loss


@dataclass
class LossBundle:
    """Scalar record of one training step; what the training log serializes."""

    adv_d_u: float = 0.0
    adv_d_ensemble: dict = field(default_factory=dict)
    adv_g: float = 0.0
    align_lpips: float = 0.0
    r1: float = 0.0
    lambda_adv: float = 1.0
    lambda_lpips: float = 10.0

    @property
    def total_d(self) -> float:
        return self.adv_d_u + sum(self.adv_d_ensemble.values()) + self.r1

    @property
    def total_g(self) -> float:
        return self.lambda_adv * self.adv_g + self.lambda_lpips * self.align_lpips

    def is_finite(self) -> bool:
        values = [self.adv_d_u, self.adv_g, self.align_lpips, self.r1,
                  *self.adv_d_ensemble.values()]
        return all(math.isfinite(v) for v in values)

    def to_record(self) -> dict:
        rec = {
            "adv_d_u": self.adv_d_u,
            "adv_g": self.adv_g,
            "align_lpips": self.align_lpips,
            "r1": self.r1,
            "total_d": self.total_d,
            "total_g": self.total_g,
        }
        for layer, value in self.adv_d_ensemble.items():
            rec[f"adv_d_{layer}"] = value
        return rec
