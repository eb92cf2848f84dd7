"""Procedural toy domains: a desk-scale stand-in for the synthetic/real
dataset pair.

The synthetic domain renders flat-colored scenes with exact layouts; the real
domain renders the same scene family with textured, noise-perturbed
appearance, no labels, and deliberately shifted class frequencies (more sky
and buildings on the synthetic side, more trees on the real side), emulating
the cross-domain mismatch the training framework has to survive.
"""

import numpy as np

from .data import ArrayDataset, ClassPalette, PairedSample, SemanticLayout

# role order is fixed; a palette with C classes uses the first C entries
TOY_CLASS_NAMES = ("sky", "ground", "building", "tree", "car", "road", "pole", "sign")
TOY_CLASS_COLORS = (
    (90, 150, 220),
    (140, 110, 70),
    (170, 170, 170),
    (50, 140, 60),
    (210, 60, 50),
    (60, 60, 75),
    (235, 220, 90),
    (220, 110, 180),
)

MAX_TOY_CLASSES = len(TOY_CLASS_NAMES)


def toy_palette(num_classes: int = 5) -> ClassPalette:
    if not 2 <= num_classes <= MAX_TOY_CLASSES:
        raise ValueError(f"toy palette supports 2..{MAX_TOY_CLASSES} classes, got {num_classes}")
    return ClassPalette(
        num_classes=num_classes,
        id_to_name=TOY_CLASS_NAMES[:num_classes],
        id_to_color=TOY_CLASS_COLORS[:num_classes],
    )


def _smooth_noise(rng, h, w, scale=8):
    """Coarse noise field upsampled to (h, w) by repetition + box blur."""
    coarse = rng.normal(size=(max(1, h // scale), max(1, w // scale)))
    field = np.repeat(np.repeat(coarse, scale, axis=0), scale, axis=1)[:h, :w]
    if field.shape != (h, w):
        pad_h, pad_w = h - field.shape[0], w - field.shape[1]
        field = np.pad(field, ((0, pad_h), (0, pad_w)), mode="edge")
    kernel = np.ones(5) / 5.0
    field = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, field)
    field = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="same"), 0, field)
    return field


def scene_layout(rng: np.random.Generator, domain: str, num_classes: int, hw) -> np.ndarray:
    """Sample one (H, W) id map. `domain` picks the class-frequency regime."""
    if domain not in ("synthetic", "real"):
        raise ValueError(f"unknown domain {domain!r}")
    h, w = hw
    ids = np.zeros((h, w), dtype=np.int64)  # sky

    if domain == "synthetic":
        horizon = int(h * rng.uniform(0.45, 0.60))
        n_buildings = rng.integers(2, 5)
        n_trees = rng.integers(1, 3)
    else:
        horizon = int(h * rng.uniform(0.30, 0.42))
        n_buildings = rng.integers(0, 2)
        n_trees = rng.integers(2, 5)

    ids[horizon:] = 1  # ground

    if num_classes > 5:  # road band on the ground
        band = max(2, int((h - horizon) * rng.uniform(0.25, 0.4)))
        top = horizon + int((h - horizon) * rng.uniform(0.15, 0.45))
        ids[top : top + band] = 5

    if num_classes > 2:
        for _ in range(int(n_buildings)):
            bw = int(w * rng.uniform(0.10, 0.22))
            bh = int(horizon * rng.uniform(0.45, 0.95))
            x0 = int(rng.integers(0, max(1, w - bw)))
            ids[horizon - bh : horizon, x0 : x0 + bw] = 2

    if num_classes > 3:
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(int(n_trees)):
            r = int(h * rng.uniform(0.11, 0.20))
            cx = int(rng.integers(0, w))
            cy = horizon - int(r * rng.uniform(0.3, 0.8))
            ids[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 3

    if num_classes > 6:
        for _ in range(int(rng.integers(1, 3))):
            px = int(rng.integers(2, w - 2))
            ph = int(h * rng.uniform(0.2, 0.4))
            pw = max(1, h // 48)
            ids[horizon - ph : horizon, px : px + pw] = 6
            if num_classes > 7 and rng.random() < 0.8:
                s = max(2, int(h * 0.05))
                ids[horizon - ph : horizon - ph + s, px - s // 2 : px - s // 2 + s] = 7

    if num_classes > 4:
        for _ in range(int(rng.integers(1, 3))):
            ch = int(h * rng.uniform(0.09, 0.15))
            cw = int(ch * rng.uniform(1.6, 2.2))
            cx = int(rng.integers(0, max(1, w - cw)))
            cy = int(rng.integers(horizon, max(horizon + 1, h - ch)))
            ids[cy : cy + ch, cx : cx + cw] = 4

    return ids


def render_scene(rng: np.random.Generator, ids: np.ndarray, domain: str, num_classes: int) -> np.ndarray:
    """Render an id map to a (3, H, W) float32 image in [-1, 1].

    Synthetic scenes are flat palette colors; real scenes add per-class
    brightness jitter, a smooth texture field, and pixel noise while staying
    nearest to their own class color.
    """
    colors = np.asarray(TOY_CLASS_COLORS[:num_classes], dtype=np.float32) / 255.0
    img = colors[ids]  # (H, W, 3) in [0, 1]
    if domain == "real":
        h, w = ids.shape
        class_gain = rng.uniform(0.88, 1.12, size=(num_classes, 1))
        img = img * class_gain[ids]
        texture = _smooth_noise(rng, h, w)[..., None] * 0.10
        img = img * (1.0 + texture)
        img = img + rng.normal(scale=0.035, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
    return (img.astype(np.float32) * 2.0 - 1.0).transpose(2, 0, 1)


def make_toy_domains(seed: int, n_synthetic: int, n_real: int, num_classes: int = 5, hw=(64, 128)):
    """Build the paired synthetic and unpaired real toy datasets in memory.

    Pure function of its arguments: the same seed yields bit-identical
    datasets.
    """
    if not 2 <= num_classes <= MAX_TOY_CLASSES:
        raise ValueError(f"num_classes must be in 2..{MAX_TOY_CLASSES}, got {num_classes}")
    h, w = hw
    if h % 16 or w % 16 or h <= 0 or w <= 0:
        raise ValueError(f"toy resolution {h}x{w} must be positive and divisible by 16")
    if n_synthetic < 1 or n_real < 1:
        raise ValueError("need at least one sample per domain")

    palette = toy_palette(num_classes)
    syn_seed, real_seed = np.random.SeedSequence(seed).spawn(2)

    rng = np.random.default_rng(syn_seed)
    syn_samples = []
    for _ in range(n_synthetic):
        ids = scene_layout(rng, "synthetic", num_classes, hw)
        image = render_scene(rng, ids, "synthetic", num_classes)
        syn_samples.append(PairedSample(SemanticLayout(ids, num_classes), image))

    rng = np.random.default_rng(real_seed)
    real_samples = []
    for _ in range(n_real):
        ids = scene_layout(rng, "real", num_classes, hw)
        real_samples.append(render_scene(rng, ids, "real", num_classes))

    synthetic = ArrayDataset("paired_synthetic", syn_samples, palette)
    real = ArrayDataset("unpaired_real", real_samples, palette)
    return synthetic, real
