"""Whole-image wavelet discriminator, feature-space discriminator ensemble,
and their regularizers.

The whole-image discriminator runs on Haar coefficients, returns one logit
per image, and is trained with R1 regularization (never spectrally
normalized). Each feature discriminator runs on one backbone layer's
activations through 5 blocks of (spectrally normalized conv - group norm -
ReLU) plus a spectrally normalized 1x1 projection to a per-pixel logit map.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.utils as nn_utils

from .wavelet import dwt2


@dataclass(frozen=True)
class DiscriminatorConfig:
    d_u_width: int = 64
    ensemble_width: int = 128
    group_norm_groups: int = 8


def spectral_normalize(weight: torch.Tensor, tol: float = 1e-6, max_iter: int = 2000) -> torch.Tensor:
    """Divide a weight matrix by its top singular value (power iteration run
    to convergence). Tensors with more than 2 dims are treated as matrices of
    shape (dim0, rest), matching how conv kernels are unrolled."""
    if weight.dim() < 2:
        raise ValueError("spectral_normalize expects at least a 2-d weight")
    mat = weight.reshape(weight.shape[0], -1).detach()
    if not mat.abs().sum() > 0:
        raise ValueError("cannot spectrally normalize a zero weight")
    gen = torch.Generator().manual_seed(0)
    u = torch.randn(mat.shape[0], generator=gen, dtype=mat.dtype)
    u = u / u.norm()
    sigma = torch.zeros((), dtype=mat.dtype)
    for _ in range(max_iter):
        v = mat.t() @ u
        v = v / v.norm().clamp_min(1e-12)
        u = mat @ v
        sigma_new = u.norm()
        u = u / sigma_new.clamp_min(1e-12)
        if (sigma_new - sigma).abs() <= tol * sigma_new:
            sigma = sigma_new
            break
        sigma = sigma_new
    return weight / sigma


def _sn(module: nn.Module) -> nn.Module:
    # 1 power-iteration step per forward with a persistent u vector
    return nn_utils.spectral_norm(module)


class WholeImageDiscriminator(nn.Module):
    """Single-logit discriminator on the Haar coefficients of the image."""

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig(), in_channels: int = 3):
        super().__init__()
        w = config.d_u_width
        widths = [w, 2 * w, 4 * w, 8 * w]
        layers = []
        in_ch = 4 * in_channels
        for out_ch in widths:
            layers += [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
                       nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Conv2d(in_ch, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.trunk(dwt2(x))
        return self.head(self.pool(out)).flatten(1)


class FeatureDiscriminator(nn.Module):
    """Per-pixel realism classifier on one backbone layer's activations."""

    def __init__(self, in_channels: int, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        w = config.ensemble_width
        groups = config.group_norm_groups if w % config.group_norm_groups == 0 else 1
        blocks = []
        in_ch = in_channels
        for _ in range(5):
            blocks += [_sn(nn.Conv2d(in_ch, w, 3, padding=1)),
                       nn.GroupNorm(groups, w),
                       nn.ReLU()]
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.proj = _sn(nn.Conv2d(w, 1, 1))

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        if feat.shape[1] != self.blocks[0].in_channels:
            raise ValueError(
                f"feature has {feat.shape[1]} channels, discriminator expects "
                f"{self.blocks[0].in_channels}"
            )
        return self.proj(self.blocks(feat))


class DiscriminatorEnsemble(nn.Module):
    """One FeatureDiscriminator per backbone layer id, independent parameters."""

    def __init__(self, layer_channels: dict, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.heads = nn.ModuleDict(
            {layer: FeatureDiscriminator(ch, config) for layer, ch in layer_channels.items()}
        )

    @property
    def layer_ids(self):
        return tuple(self.heads.keys())

    def forward(self, layer_id: str, feat: torch.Tensor) -> torch.Tensor:
        if layer_id not in self.heads:
            raise KeyError(f"no discriminator for layer {layer_id!r}")
        return self.heads[layer_id](feat)


def r1_penalty(discriminator, x_real: torch.Tensor, gamma: float = 1.0) -> torch.Tensor:
    """(gamma/2) * E[ ||d D(x)/dx||^2 ] at real samples.

    Keeps the graph of the inner gradient so the penalty itself can be
    backpropagated into the discriminator parameters.
    """
    x = x_real.detach().requires_grad_(True)
    logits = discriminator(x)
    (grad,) = torch.autograd.grad(logits.sum(), x, create_graph=True)
    return 0.5 * gamma * grad.flatten(1).square().sum(dim=1).mean()


def has_spectral_norm(module: nn.Module) -> bool:
    """True if any submodule carries a spectral-norm weight hook (used by the
    structural invariant tests)."""
    for m in module.modules():
        for hook in getattr(m, "_forward_pre_hooks", {}).values():
            if type(hook).__name__ == "SpectralNorm":
                return True
        if hasattr(m, "parametrizations"):
            return True
    return False
