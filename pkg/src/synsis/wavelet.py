"""Single-level orthonormal 2-D Haar transform.

Coefficients are returned as (B, 4C, H/2, W/2) with channel blocks ordered
(LL, LH, HL, HH). With the orthonormal 1/2 scaling per 2x2 block the
transform preserves energy exactly, and `idwt2` is its exact inverse.
"""

import torch


def dwt2(x: torch.Tensor) -> torch.Tensor:
    """Analysis transform of a (B, C, H, W) tensor; H and W must be even."""
    if x.dim() != 4:
        raise ValueError(f"expected a 4-d (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"spatial size {h}x{w} must be even for a 2x2 Haar step")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return torch.cat((ll, lh, hl, hh), dim=1)


def idwt2(coeffs: torch.Tensor) -> torch.Tensor:
    """Synthesis transform; exact inverse of `dwt2` up to float rounding."""
    if coeffs.dim() != 4:
        raise ValueError(f"expected a 4-d coefficient tensor, got shape {tuple(coeffs.shape)}")
    if coeffs.shape[1] % 4:
        raise ValueError(
            f"coefficient tensor must have 4*C channels, got {coeffs.shape[1]}"
        )
    ll, lh, hl, hh = coeffs.chunk(4, dim=1)
    a = (ll + lh + hl + hh) / 2
    b = (ll - lh + hl - hh) / 2
    c = (ll + lh - hl - hh) / 2
    d = (ll - lh - hl + hh) / 2
    nb, nc, hh2, ww2 = a.shape
    top = torch.stack((a, b), dim=-1).reshape(nb, nc, hh2, 2 * ww2)
    bottom = torch.stack((c, d), dim=-1).reshape(nb, nc, hh2, 2 * ww2)
    return torch.stack((top, bottom), dim=-2).reshape(nb, nc, 2 * hh2, 2 * ww2)
