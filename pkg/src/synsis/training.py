"""Alternating optimization of the generator against the whole-image
discriminator and the feature-space ensemble, with deterministic seeding,
JSON-lines loss logging, and lossless checkpointing.

Every random draw (batch indices, noise volumes, parameter init) is a pure
function of (root seed, subsystem, step), so two runs with the same config
produce identical loss logs and a resumed run continues the uninterrupted
one exactly.
"""

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .backbone import BackboneConfig, FeatureExtractor
from .data import DatasetHandle, resize_sample
from .discriminators import (DiscriminatorConfig, DiscriminatorEnsemble,
                             WholeImageDiscriminator, r1_penalty)
from .generator import Generator, GeneratorConfig
from .losses import (LossBundle, channel_normalize, disc_loss_ensemble,
                     disc_loss_whole, gen_adv_loss)
from .patches import patchify
from .seeding import derive_seed, numpy_rng, torch_generator

CHECKPOINT_FORMAT_VERSION = 1

VALID_GRIDS = (1, 2, 4)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def _scalar(t: torch.Tensor) -> float:
    return float(t.detach())


@dataclass
class TrainConfig:
    batch_size: int = 2
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    max_steps: int = 2000
    seed: int = 0
    d_steps_per_g: int = 1
    r1_gamma: float = 1.0
    r1_interval: int = 16
    grid_k_align: int = 2
    grid_k_disc_u: int = 1
    grid_k_disc_ensemble: int = 2
    # alignment weight sized so the guide gradient leads the adversarial one;
    # channel-mean normalized features make the raw perceptual term small
    lambda_lpips: float = 20000.0
    patchwise_generation: bool = False
    ema: bool = False
    ema_decay: float = 0.999
    checkpoint_interval: int = 500
    log_interval: int = 1

    def __post_init__(self):
        if min(self.batch_size, self.max_steps, self.d_steps_per_g, self.r1_interval) < 1:
            raise ValueError("batch_size, max_steps, d_steps_per_g, r1_interval must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for name in ("grid_k_align", "grid_k_disc_u", "grid_k_disc_ensemble"):
            if getattr(self, name) not in VALID_GRIDS:
                raise ValueError(f"{name} must be one of {VALID_GRIDS}")


class SynBatch(NamedTuple):
    onehot: torch.Tensor   # (B, C, H, W)
    images: torch.Tensor   # (B, 3, H, W)
    indices: tuple         # dataset indices, used as feature-cache keys


@dataclass
class TrainState:
    generator: Generator
    d_u: WholeImageDiscriminator
    ensemble: DiscriminatorEnsemble
    extractor: FeatureExtractor
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    train_config: TrainConfig
    generator_config: GeneratorConfig
    backbone_config: BackboneConfig
    disc_config: DiscriminatorConfig
    step: int = 0
    ema_shadow: dict = None
    syn_feature_cache: dict = field(default_factory=dict)


def init_state(train_cfg: TrainConfig, gen_cfg: GeneratorConfig,
               backbone_cfg: BackboneConfig = None,
               disc_cfg: DiscriminatorConfig = None) -> TrainState:
    backbone_cfg = backbone_cfg or BackboneConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    torch.manual_seed(derive_seed(train_cfg.seed, "init") & ((1 << 63) - 1))
    generator = Generator(gen_cfg)
    d_u = WholeImageDiscriminator(disc_cfg)
    extractor = FeatureExtractor(backbone_cfg)
    ensemble = DiscriminatorEnsemble(extractor.out_channels, disc_cfg)
    opt_g = torch.optim.Adam(generator.parameters(), lr=train_cfg.lr,
                             betas=(train_cfg.beta1, train_cfg.beta2))
    opt_d = torch.optim.Adam(
        list(d_u.parameters()) + list(ensemble.parameters()),
        lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
    )
    ema_shadow = None
    if train_cfg.ema:
        ema_shadow = {k: v.detach().clone() for k, v in generator.state_dict().items()}
    return TrainState(generator, d_u, ensemble, extractor, opt_g, opt_d,
                      train_cfg, gen_cfg, backbone_cfg, disc_cfg,
                      ema_shadow=ema_shadow)


def _route(x: torch.Tensor, grid_k: int) -> torch.Tensor:
    return x if grid_k == 1 else patchify(x, grid_k).data


def _syn_features(state: TrainState, batch: SynBatch, grid_k: int) -> dict:
    """phi of the synthetic guide, cached per sample. Always computed
    per-sample so cold and warm caches hold bit-identical values."""
    per_sample = []
    for pos, idx in enumerate(batch.indices):
        key = (idx, grid_k)
        if idx is None or key not in state.syn_feature_cache:
            with torch.no_grad():
                feats = state.extractor.phi(batch.images[pos:pos + 1], grid_k)
            if idx is not None:
                state.syn_feature_cache[key] = feats
        else:
            feats = state.syn_feature_cache[key]
        per_sample.append(feats)
    return {
        layer: torch.cat([f[layer] for f in per_sample], dim=0)
        for layer in state.extractor.layer_ids
    }


def _ema_update(state: TrainState):
    decay = state.train_config.ema_decay
    with torch.no_grad():
        for name, param in state.generator.state_dict().items():
            shadow = state.ema_shadow[name]
            if param.dtype.is_floating_point:
                shadow.mul_(decay).add_(param, alpha=1 - decay)
            else:
                shadow.copy_(param)


def train_step(state: TrainState, batch_syn: SynBatch, batch_real: torch.Tensor) -> LossBundle:
    """One D update (plus scheduled R1) followed by one G update."""
    cfg = state.train_config
    gen, d_u, ensemble, extractor = (state.generator, state.d_u, state.ensemble,
                                     state.extractor)
    gen.train()
    d_u.train()
    ensemble.train()
    b, _, h, w = batch_syn.onehot.shape

    z = torch.randn(b, state.generator_config.noise_dim, h, w,
                    generator=torch_generator(cfg.seed, "z", state.step))
    if cfg.patchwise_generation:
        fake = gen.generate_patchwise(batch_syn.onehot, z, cfg.grid_k_align)
    else:
        fake = gen(batch_syn.onehot, z)
    if not torch.isfinite(fake).all():
        raise TrainingDiverged("generator produced non-finite values",
                               {"step": state.step})

    # fake features are computed once: detached for the D update, live for
    # the G update that follows the D step
    feat_fake = extractor.phi(fake, cfg.grid_k_disc_ensemble)
    with torch.no_grad():
        feat_real = extractor.phi(batch_real, cfg.grid_k_disc_ensemble)
    du_real = _route(batch_real, cfg.grid_k_disc_u)
    du_fake = _route(fake, cfg.grid_k_disc_u)

    bundle = LossBundle(lambda_lpips=cfg.lambda_lpips)

    for _ in range(cfg.d_steps_per_g):
        loss_d_u = disc_loss_whole(d_u, du_real, du_fake.detach())
        ensemble_losses = {
            layer: disc_loss_ensemble(ensemble.heads[layer], feat_real[layer],
                                      feat_fake[layer].detach())
            for layer in ensemble.layer_ids
        }
        loss_d = loss_d_u + sum(ensemble_losses.values())
        if state.step % cfg.r1_interval == 0:
            r1 = r1_penalty(d_u, du_real, cfg.r1_gamma)
            loss_d = loss_d + r1
            bundle.r1 = _scalar(r1)
        state.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        state.opt_d.step()
        bundle.adv_d_u = _scalar(loss_d_u)
        bundle.adv_d_ensemble = {k: _scalar(v) for k, v in ensemble_losses.items()}

    loss_g_adv = gen_adv_loss(d_u, ensemble, du_fake, feat_fake)
    if cfg.grid_k_align == cfg.grid_k_disc_ensemble:
        gen_align_feats = feat_fake
    else:
        gen_align_feats = extractor.phi(fake, cfg.grid_k_align)
    syn_feats = _syn_features(state, batch_syn, cfg.grid_k_align)
    loss_align = fake.new_zeros(())
    for layer in extractor.layer_ids:
        diff = channel_normalize(syn_feats[layer]) - channel_normalize(gen_align_feats[layer])
        loss_align = loss_align + diff.square().mean()
    loss_g = loss_g_adv + cfg.lambda_lpips * loss_align
    state.opt_g.zero_grad(set_to_none=True)
    loss_g.backward()
    state.opt_g.step()
    if state.ema_shadow is not None:
        _ema_update(state)

    bundle.adv_g = _scalar(loss_g_adv)
    bundle.align_lpips = _scalar(loss_align)
    if not bundle.is_finite():
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}",
            {"step": state.step, **bundle.to_record()},
        )
    state.step += 1
    return bundle


def collate_syn(handle: DatasetHandle, indices, target_hw) -> SynBatch:
    onehots, images = [], []
    for i in indices:
        layout, image = handle.sample(i)
        if layout.shape != tuple(target_hw):
            image, layout = resize_sample(image, layout, target_hw)
        onehots.append(layout.onehot())
        images.append(image)
    return SynBatch(
        onehot=torch.from_numpy(np.stack(onehots)),
        images=torch.from_numpy(np.stack(images)),
        indices=tuple(int(i) for i in indices),
    )


def collate_real(handle: DatasetHandle, indices, target_hw) -> torch.Tensor:
    images = []
    for i in indices:
        image = handle.image(i)
        if image.shape[1:] != tuple(target_hw):
            image = torch.nn.functional.interpolate(
                torch.from_numpy(image)[None], size=tuple(target_hw),
                mode="bilinear", align_corners=False)[0].numpy()
        images.append(image)
    return torch.from_numpy(np.stack(images))


def sample_batches(syn: DatasetHandle, real: DatasetHandle, cfg: TrainConfig,
                   step: int, target_hw):
    """Independent per-step draws from the two (unpaired) domains."""
    rng = numpy_rng(cfg.seed, "data", step)
    syn_idx = rng.integers(0, syn.size, cfg.batch_size)
    real_idx = rng.integers(0, real.size, cfg.batch_size)
    return (collate_syn(syn, syn_idx, target_hw),
            collate_real(real, real_idx, target_hw))


def save_checkpoint(state: TrainState, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": state.step,
        "train_config": asdict(state.train_config),
        "generator_config": asdict(state.generator_config),
        "backbone_config": asdict(state.backbone_config),
        "disc_config": asdict(state.disc_config),
        "generator": state.generator.state_dict(),
        "d_u": state.d_u.state_dict(),
        "ensemble": state.ensemble.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "ema_shadow": state.ema_shadow,
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> TrainState:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    gen_cfg = payload["generator_config"]
    gen_cfg["output_hw"] = tuple(gen_cfg["output_hw"])
    bb_cfg = payload["backbone_config"]
    bb_cfg["layer_ids"] = tuple(bb_cfg["layer_ids"])
    for k in ("input_mean", "input_std"):
        bb_cfg[k] = tuple(bb_cfg[k])
    state = init_state(
        TrainConfig(**payload["train_config"]),
        GeneratorConfig(**gen_cfg),
        BackboneConfig(**bb_cfg),
        DiscriminatorConfig(**payload["disc_config"]),
    )
    state.generator.load_state_dict(payload["generator"])
    state.d_u.load_state_dict(payload["d_u"])
    state.ensemble.load_state_dict(payload["ensemble"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.ema_shadow = payload["ema_shadow"]
    state.step = payload["step"]
    torch.set_rng_state(payload["torch_rng"])
    return state


def train(state: TrainState, syn_train: DatasetHandle, real: DatasetHandle,
          log_path=None, checkpoint_dir=None, eval_fn=None, eval_interval: int = 0,
          max_steps: int = None) -> list:
    """Run the loop until max_steps, logging one record per step, writing
    periodic checkpoints, and invoking the metric hook on its interval.
    Returns the list of per-step records."""
    cfg = state.train_config
    target_hw = state.generator_config.output_hw
    stop = cfg.max_steps if max_steps is None else max_steps
    records = []
    log_file = open(log_path, "a") if log_path else None
    try:
        while state.step < stop:
            batch_syn, batch_real = sample_batches(syn_train, real, cfg,
                                                   state.step, target_hw)
            t0 = time.time()
            step_before = state.step
            bundle = train_step(state, batch_syn, batch_real)
            record = {"step": step_before, **bundle.to_record(),
                      "wall_time": time.time() - t0}
            records.append(record)
            if log_file and step_before % cfg.log_interval == 0:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if checkpoint_dir and state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(state, os.path.join(
                    checkpoint_dir, f"step_{state.step:06d}.pt"))
            if eval_fn and eval_interval and state.step % eval_interval == 0:
                eval_fn(state)
    finally:
        if log_file:
            log_file.close()
    if checkpoint_dir:
        save_checkpoint(state, os.path.join(checkpoint_dir, "final.pt"))
    return records


def parameter_checksum(module: torch.nn.Module) -> float:
    """Order-stable fingerprint of all parameters; used to assert that frozen
    modules stay frozen."""
    total = 0.0
    for name, param in sorted(module.state_dict().items()):
        if param.dtype.is_floating_point:
            total += float(param.double().sum())
    return total
