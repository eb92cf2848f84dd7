"""Conditional generator: semantic layout + spatial noise volume -> image.

Spatially-adaptive normalization residual blocks conditioned on the one-hot
map (with the noise volume concatenated as extra condition channels) at every
scale; bounded tanh output keeps images in [-1, 1]. Fully convolutional, so
the same weights run on whole layouts or on individual layout patches.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .patches import PatchStack, patchify, unpatchify


@dataclass(frozen=True)
class GeneratorConfig:
    num_classes: int
    base_width: int = 32
    num_stages: int = 4
    noise_dim: int = 16
    output_hw: tuple = (64, 128)

    def __post_init__(self):
        if min(self.num_classes, self.base_width, self.num_stages, self.noise_dim) < 1:
            raise ValueError("all generator config fields must be positive")
        h, w = self.output_hw
        s = 2 ** self.num_stages
        if h % s or w % s:
            raise ValueError(
                f"output {h}x{w} must be divisible by 2^num_stages = {s}"
            )

    @property
    def initial_hw(self) -> tuple:
        return (self.output_hw[0] // 2 ** self.num_stages,
                self.output_hw[1] // 2 ** self.num_stages)


def _groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else 1


class SpadeNorm(nn.Module):
    """Parameter-free normalization modulated by a spatial condition map."""

    def __init__(self, channels, cond_channels, hidden=64):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels, affine=False)
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, x, cond):
        cond = F.interpolate(cond, size=x.shape[-2:], mode="nearest")
        actv = F.relu(self.shared(cond))
        return self.norm(x) * (1 + self.gamma(actv)) + self.beta(actv)


class SpadeResBlock(nn.Module):
    def __init__(self, fin, fout, cond_channels):
        super().__init__()
        fmid = min(fin, fout)
        self.norm_0 = SpadeNorm(fin, cond_channels)
        self.conv_0 = nn.Conv2d(fin, fmid, 3, padding=1)
        self.norm_1 = SpadeNorm(fmid, cond_channels)
        self.conv_1 = nn.Conv2d(fmid, fout, 3, padding=1)
        self.learned_shortcut = fin != fout
        if self.learned_shortcut:
            self.norm_s = SpadeNorm(fin, cond_channels)
            self.conv_s = nn.Conv2d(fin, fout, 1, bias=False)

    def forward(self, x, cond):
        if self.learned_shortcut:
            x_s = self.conv_s(self.norm_s(x, cond))
        else:
            x_s = x
        dx = self.conv_0(F.leaky_relu(self.norm_0(x, cond), 0.2))
        dx = self.conv_1(F.leaky_relu(self.norm_1(dx, cond), 0.2))
        return x_s + dx


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        cond_nc = config.num_classes + config.noise_dim
        widths = [config.base_width * min(8, 2 ** (config.num_stages - i))
                  for i in range(config.num_stages + 1)]
        self.fc = nn.Conv2d(cond_nc, widths[0], 3, padding=1)
        self.blocks = nn.ModuleList(
            SpadeResBlock(widths[i], widths[i + 1], cond_nc)
            for i in range(config.num_stages)
        )
        self.conv_img = nn.Conv2d(widths[-1], 3, 3, padding=1)

    def forward(self, onehot: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Generate (B, 3, H, W) images in [-1, 1] from a one-hot layout batch
        (B, C, H, W) and a noise volume (B, noise_dim, H, W)."""
        if onehot.dim() != 4 or onehot.shape[1] != self.config.num_classes:
            raise ValueError(
                f"layout batch has {onehot.shape[1] if onehot.dim() == 4 else '?'} "
                f"channels, generator is configured for {self.config.num_classes} classes"
            )
        if z.shape[0] != onehot.shape[0] or z.shape[1] != self.config.noise_dim \
                or z.shape[-2:] != onehot.shape[-2:]:
            raise ValueError(
                f"noise shape {tuple(z.shape)} does not match layout "
                f"{tuple(onehot.shape)} with noise_dim={self.config.noise_dim}"
            )
        h, w = onehot.shape[-2:]
        s = 2 ** self.config.num_stages
        if h % s or w % s:
            raise ValueError(f"input {h}x{w} must be divisible by 2^num_stages = {s}")
        cond = torch.cat((onehot, z), dim=1)
        x = self.fc(F.interpolate(cond, size=(h // s, w // s), mode="nearest"))
        for block in self.blocks:
            x = block(x, cond)
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return torch.tanh(self.conv_img(F.leaky_relu(x, 0.2)))

    generate = forward

    def generate_patchwise(self, onehot: torch.Tensor, z: torch.Tensor, grid_k: int) -> torch.Tensor:
        """Run the generator independently on each (layout, noise) patch of a
        k x k grid and reassemble the outputs."""
        if grid_k == 1:
            return self.forward(onehot, z)
        m_patches = patchify(onehot, grid_k)
        z_patches = patchify(z, grid_k)
        out = self.forward(m_patches.data, z_patches.data)
        b, _, h, w = onehot.shape
        return unpatchify(PatchStack(data=out, grid_k=grid_k, source_shape=(b, 3, h, w)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
