"""Patch operator: split a batch into a k x k grid of equal patches stacked
along the batch axis, and its exact inverse."""

from dataclasses import dataclass

import torch


@dataclass
class PatchStack:
    """Patches stacked along the batch axis plus the grid metadata needed to
    invert the split.

    `data` has shape (B*k^2, C, H/k, W/k). The k^2 patches of each source item
    are contiguous and ordered row-major over the grid; source items keep
    their original order.
    """

    data: torch.Tensor
    grid_k: int
    source_shape: tuple


def patchify(x: torch.Tensor, grid_k: int) -> PatchStack:
    """Split (B, C, H, W) into a grid_k x grid_k grid of equal patches.

    grid_k=1 is the identity. Pure reshape/permute: no pixel is duplicated
    or dropped, and the operation is exactly invertible by `unpatchify`.
    """
    if x.dim() != 4:
        raise ValueError(f"expected a 4-d (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    if grid_k < 1:
        raise ValueError(f"grid_k must be >= 1, got {grid_k}")
    b, c, h, w = x.shape
    if h % grid_k or w % grid_k:
        raise ValueError(
            f"spatial size {h}x{w} not divisible by grid_k={grid_k}"
        )
    ph, pw = h // grid_k, w // grid_k
    data = (
        x.reshape(b, c, grid_k, ph, grid_k, pw)
        .permute(0, 2, 4, 1, 3, 5)
        .reshape(b * grid_k * grid_k, c, ph, pw)
    )
    return PatchStack(data=data, grid_k=grid_k, source_shape=(b, c, h, w))


def unpatchify(ps: PatchStack) -> torch.Tensor:
    """Exact inverse of `patchify`."""
    b, c, h, w = ps.source_shape
    k = ps.grid_k
    ph, pw = h // k, w // k
    expected = (b * k * k, c, ph, pw)
    if tuple(ps.data.shape) != expected:
        raise ValueError(
            f"patch stack shape {tuple(ps.data.shape)} inconsistent with "
            f"grid_k={k} and source_shape={ps.source_shape} (expected {expected})"
        )
    return (
        ps.data.reshape(b, k, k, c, ph, pw)
        .permute(0, 3, 1, 4, 2, 5)
        .reshape(b, c, h, w)
    )
