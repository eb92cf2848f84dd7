"""Frozen convolutional feature extractor (standard 16-layer classification
backbone) providing the per-layer activations used by the feature-space
discriminator ensemble and the patchwise perceptual alignment loss.

Weights come either from a local file (`weights_source` = a path) or from a
seeded fixed-random init (`weights_source` = "random_fixed"), which lets the
whole test suite run without any pretrained download. In both cases the
weights are frozen: gradients flow to the input, never to the backbone.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .patches import patchify
from .seeding import torch_generator

# (conv name, out_channels); "pool" marks a 2x2 max-pool boundary.
# The activation after conv `convX_Y` is addressable as layer id `reluX_Y`.
_CONV_PLAN = (
    ("conv1_1", 64), ("conv1_2", 64), "pool",
    ("conv2_1", 128), ("conv2_2", 128), "pool",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), "pool",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), "pool",
    ("conv5_1", 512), ("conv5_2", 512), ("conv5_3", 512),
)

# torchvision-style state dicts index convs as features.N; map them to names
_TORCHVISION_CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28)

LAYER_CHANNELS = {name.replace("conv", "relu"): ch for name, ch in
                  (e for e in _CONV_PLAN if e != "pool")}


@dataclass(frozen=True)
class BackboneConfig:
    """layer_ids must be ordered shallow to deep. weights_source is either
    "random_fixed" (seeded init, reproducible across processes) or a path to
    a local state-dict file. Input images in [-1, 1] are re-normalized to the
    backbone's published per-channel statistics internally."""

    layer_ids: tuple = ("relu3_3", "relu4_3", "relu5_3")
    weights_source: str = "random_fixed"
    seed: int = 0
    input_mean: tuple = (0.485, 0.456, 0.406)
    input_std: tuple = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if not self.layer_ids:
            raise ValueError("need at least one layer id")
        order = [name.replace("conv", "relu") for name, _ in
                 (e for e in _CONV_PLAN if e != "pool")]
        unknown = [l for l in self.layer_ids if l not in order]
        if unknown:
            raise ValueError(f"unknown layer ids {unknown}; known: {order}")
        depths = [order.index(l) for l in self.layer_ids]
        if sorted(depths) != depths or len(set(depths)) != len(depths):
            raise ValueError("layer_ids must be strictly increasing in depth")


class FeatureExtractor(nn.Module):
    """Frozen feature pyramid extractor.

    extract() returns an ordered dict layer_id -> activation; phi() first
    applies the patch operator, so every pyramid layer has batch B * k^2.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.layer_ids = tuple(config.layer_ids)

        # build only as deep as the deepest requested activation
        deepest = self.layer_ids[-1].replace("relu", "conv")
        self._steps = []  # ("conv", name) | ("pool",)
        pools_before_deepest = 0
        for entry in _CONV_PLAN:
            if entry == "pool":
                self._steps.append(("pool",))
                pools_before_deepest += 1
            else:
                name, _ = entry
                self._steps.append(("conv", name))
                if name == deepest:
                    break
        self.min_input_hw = 2 ** pools_before_deepest

        convs = {}
        in_ch = 3
        for entry in _CONV_PLAN:
            if entry == "pool":
                continue
            name, out_ch = entry
            convs[name] = nn.Conv2d(in_ch, out_ch, 3, padding=1)
            in_ch = out_ch
            if name == deepest:
                break
        self.convs = nn.ModuleDict(convs)

        if config.weights_source == "random_fixed":
            self._init_random_fixed(config.seed)
        else:
            self._load_state_file(config.weights_source)

        self.register_buffer("_mean", torch.tensor(config.input_mean).view(1, 3, 1, 1))
        self.register_buffer("_std", torch.tensor(config.input_std).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def _init_random_fixed(self, seed: int):
        gen = torch_generator(seed, "backbone")
        for conv in self.convs.values():
            fan_in = conv.in_channels * 9
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                conv.bias.zero_()

    def _load_state_file(self, path: str):
        state = torch.load(path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            names = [name for name, _ in (e for e in _CONV_PLAN if e != "pool")]
            remapped = {}
            for idx, name in zip(_TORCHVISION_CONV_INDICES, names):
                for kind in ("weight", "bias"):
                    key = f"features.{idx}.{kind}"
                    if key in state:
                        remapped[f"{name}.{kind}"] = state[key]
            state = remapped
        own = {f"convs.{k}": v for k, v in state.items() if k.split(".")[0] in self.convs}
        missing = {f"convs.{n}.weight" for n in self.convs} - set(own)
        if missing:
            raise ValueError(f"weights file {path} is missing {sorted(missing)}")
        self.load_state_dict(own, strict=False)

    def extract(self, x: torch.Tensor) -> dict:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got shape {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h < self.min_input_hw or w < self.min_input_hw:
            raise ValueError(
                f"input {h}x{w} smaller than backbone minimum "
                f"{self.min_input_hw}x{self.min_input_hw} for layer {self.layer_ids[-1]}"
            )
        out = (x * 0.5 + 0.5 - self._mean) / self._std
        feats = {}
        for step in self._steps:
            if step[0] == "pool":
                out = F.max_pool2d(out, 2)
            else:
                name = step[1]
                out = F.relu(self.convs[name](out))
                relu_name = name.replace("conv", "relu")
                if relu_name in self.layer_ids:
                    feats[relu_name] = out
        return feats

    def phi(self, x: torch.Tensor, grid_k: int) -> dict:
        """Features of the patch stack: extract(P(x))."""
        return self.extract(patchify(x, grid_k).data)

    def forward(self, x):
        return self.extract(x)

    @property
    def out_channels(self) -> dict:
        return {l: LAYER_CHANNELS[l] for l in self.layer_ids}
