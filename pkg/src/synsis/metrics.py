"""Evaluation metrics: Frechet distance and kernel distance between embedded
feature sets, mean IoU against the input labels, and the split-evaluation
driver that generates images for every label in a split and scores them
against a reference image set.

The embedder is pluggable: the toy/test profile uses a fixed random conv
embedder (the distance properties hold for any embedder), the benchmark
profile loads the standard pretrained inception embedder from a local
weights file.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .data import DatasetHandle, image_to_uint8
from .seeding import torch_generator

SQRTM_METHOD = "eigendecomposition of the symmetrized product, eigenvalues clamped at 0"


@dataclass
class FeatureSet:
    """N x D embedded features plus the id of the embedder that made them."""

    features: np.ndarray
    embedder_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be N x D, got shape {self.features.shape}")


def _check_pair(a: FeatureSet, b: FeatureSet):
    if a.embedder_id != b.embedder_id:
        raise ValueError(
            f"feature sets come from different embedders: "
            f"{a.embedder_id!r} vs {b.embedder_id!r}"
        )
    if a.features.shape[1] != b.features.shape[1]:
        raise ValueError("feature sets have different dimensionality")


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues from rounding clamp to 0."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    _check_pair(a, b)
    if len(a.features) < 2 or len(b.features) < 2:
        raise ValueError("need at least 2 samples per set for a covariance")
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    cov_a = np.cov(a.features, rowvar=False)
    cov_b = np.cov(b.features, rowvar=False)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    return float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross)
    )


def _poly3_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = len(x), len(y)
    kxx = _poly3_kernel(x, x)
    kyy = _poly3_kernel(y, y)
    kxy = _poly3_kernel(x, y)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


def kid(a: FeatureSet, b: FeatureSet, subset_size: int = None, n_subsets: int = 100,
        seed: int = 0) -> float:
    """Mean over random subsets of the unbiased MMD^2 with the cubic
    polynomial kernel (x.y / D + 1)^3."""
    _check_pair(a, b)
    n_a, n_b = len(a.features), len(b.features)
    if subset_size is None:
        subset_size = min(100, n_a, n_b)
    if subset_size > n_a or subset_size > n_b:
        raise ValueError(
            f"subset_size {subset_size} exceeds set sizes ({n_a}, {n_b})"
        )
    if subset_size < 2:
        raise ValueError("subset_size must be >= 2")
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_subsets):
        sa = a.features[rng.choice(n_a, subset_size, replace=False)]
        sb = b.features[rng.choice(n_b, subset_size, replace=False)]
        values.append(_mmd2_unbiased(sa, sb))
    return float(np.mean(values))


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int):
    """Mean IoU over classes with nonzero union, accumulated over the whole
    set. Returns (miou, per-class IoU array with NaN where undefined)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    confusion = np.bincount(
        (gt.reshape(-1) * num_classes + pred.reshape(-1)).astype(np.int64),
        minlength=num_classes * num_classes,
    ).reshape(num_classes, num_classes)
    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    per_class = np.full(num_classes, np.nan)
    valid = union > 0
    per_class[valid] = tp[valid] / union[valid]
    return float(np.nanmean(per_class[valid])) if valid.any() else float("nan"), per_class


class RandomConvEmbedder:
    """Fixed random convolutional embedder for desk-scale evaluation."""

    def __init__(self, seed: int = 0, feature_dim: int = 64):
        gen = torch_generator(seed, "embedder")
        layers = []
        widths = [3, 32, 64, feature_dim]
        for cin, cout in zip(widths[:-1], widths[1:]):
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (cin * 9)) ** 0.5)
                conv.bias.zero_()
            layers += [conv, nn.LeakyReLU(0.2)]
        self.net = nn.Sequential(*layers).eval().requires_grad_(False)
        self.feature_dim = feature_dim
        self.embedder_id = f"random_conv(seed={seed}, dim={feature_dim})"

    def embed(self, images) -> FeatureSet:
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        with torch.no_grad():
            feats = self.net(x).mean(dim=(2, 3))
        return FeatureSet(feats.numpy(), self.embedder_id)


class InceptionEmbedder:
    """Standard pretrained inception embedder, weights from a local file."""

    def __init__(self, weights_path: str):
        from torchvision.models import inception_v3

        if not os.path.isfile(weights_path):
            raise FileNotFoundError(f"inception weights file not found: {weights_path}")
        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        net.fc = nn.Identity()
        self.net = net.eval().requires_grad_(False)
        self.feature_dim = 2048
        self.embedder_id = f"inception_v3({os.path.basename(weights_path)})"

    def embed(self, images) -> FeatureSet:
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        x = torch.nn.functional.interpolate(
            x, size=(299, 299), mode="bilinear", align_corners=False
        )
        with torch.no_grad():
            feats = self.net(x)
        return FeatureSet(feats.numpy(), self.embedder_id)


class ColorOracleSegmenter:
    """Nearest-palette-color class decoder; the toy-profile segmenter."""

    kind = "toy_oracle"

    def __init__(self, palette):
        self.palette = palette
        anchors = np.asarray(palette.id_to_color, dtype=np.float32) / 127.5 - 1.0
        self._anchors = anchors  # (C, 3) in [-1, 1]

    def __call__(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)  # (N, 3, H, W)
        dist = ((x[:, None] - self._anchors[None, :, :, None, None]) ** 2).sum(axis=2)
        return dist.argmin(axis=1)


class TorchScriptSegmenter:
    """Pretrained external segmenter loaded from a TorchScript file; must map
    (N, 3, H, W) images in [-1, 1] to per-pixel class logits or ids."""

    kind = "pretrained_external"

    def __init__(self, path: str):
        self.net = torch.jit.load(path, map_location="cpu").eval()

    def __call__(self, images) -> np.ndarray:
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        with torch.no_grad():
            out = self.net(x)
        if out.dim() == 4:
            out = out.argmax(dim=1)
        return out.long().numpy()


@dataclass
class SplitSpec:
    """A test split: where labels come from and which images are the FID/KID
    reference, chosen independently."""

    name: str
    labels: DatasetHandle
    references: DatasetHandle


def generate_for_labels(generator, labels: DatasetHandle, seed: int, batch_size: int = 8):
    """Generate one image per label with per-index deterministic noise.
    Returns (images (N, 3, H, W) float32 array, stacked label ids)."""
    generator.eval()
    noise_dim = generator.config.noise_dim
    images, all_ids = [], []
    with torch.no_grad():
        for start in range(0, labels.size, batch_size):
            idx = range(start, min(start + batch_size, labels.size))
            layouts = [labels.layout(i) for i in idx]
            onehot = torch.from_numpy(np.stack([l.onehot() for l in layouts]))
            h, w = layouts[0].shape
            z = torch.stack([
                torch.randn(noise_dim, h, w, generator=torch_generator(seed, "eval_z", i))
                for i in idx
            ])
            images.append(generator(onehot, z).numpy())
            all_ids.extend(l.ids for l in layouts)
    return np.concatenate(images, axis=0), np.stack(all_ids)


def evaluate_split(generator, split: SplitSpec, embedder, segmenter=None, seed: int = 0,
                   batch_size: int = 8, kid_subset_size: int = None,
                   kid_subsets: int = 100) -> dict:
    """Generate images for every label in the split, score FID/KID against
    the reference images, and mIoU of the segmented generations against the
    input labels. Without a segmenter the report flags mIoU as unavailable."""
    generated, label_ids = generate_for_labels(generator, split.labels, seed, batch_size)
    references = np.stack([split.references.image(i) for i in range(split.references.size)])

    gen_feats = embedder.embed(generated)
    ref_feats = embedder.embed(references)
    report = {
        "split": split.name,
        "num_labels": int(len(generated)),
        "num_references": int(len(references)),
        "fid": fid(gen_feats, ref_feats),
        "kid": kid(gen_feats, ref_feats, subset_size=kid_subset_size,
                   n_subsets=kid_subsets, seed=seed),
        "miou": None,
        "miou_available": False,
        "embedder_id": embedder.embedder_id,
        "seed": int(seed),
        "metadata": {"fid_sqrtm": SQRTM_METHOD},
    }
    if segmenter is not None:
        palette = getattr(segmenter, "palette", None)
        if palette is not None:
            num_classes = palette.num_classes
        else:
            num_classes = generator.config.num_classes
        mean_iou, per_class = miou(segmenter(generated), label_ids, num_classes)
        report["miou"] = mean_iou
        report["miou_available"] = True
        report["per_class_iou"] = [None if np.isnan(v) else float(v) for v in per_class]
    report["_generated"] = generated  # stripped before serialization
    return report


def render_table(report: dict) -> str:
    """Aligned-text table of one report."""
    rows = [("split", report["split"]),
            ("labels", report["num_labels"]),
            ("references", report["num_references"]),
            ("FID", f"{report['fid']:.4f}"),
            ("KID", f"{report['kid']:.6f}")]
    if report["miou_available"]:
        rows.append(("mIoU", f"{report['miou']:.4f}"))
    else:
        rows.append(("mIoU", "unavailable (no segmenter)"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def contact_sheet(images: np.ndarray, path, columns: int = 8, max_images: int = 16):
    """Write a PNG grid of the first images."""
    imgs = images[:max_images]
    n = len(imgs)
    columns = min(columns, n)
    rows = (n + columns - 1) // columns
    h, w = imgs.shape[-2:]
    sheet = np.zeros((rows * h, columns * w, 3), dtype=np.uint8)
    for i, img in enumerate(imgs):
        r, c = divmod(i, columns)
        sheet[r * h:(r + 1) * h, c * w:(c + 1) * w] = image_to_uint8(img)
    Image.fromarray(sheet).save(path)


def write_report(report: dict, out_dir, stem: str = "report"):
    """Emit the machine-readable JSON, the human table, and a contact sheet."""
    os.makedirs(out_dir, exist_ok=True)
    generated = report.pop("_generated", None)
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, f"{stem}.txt"), "w") as f:
        f.write(render_table(report) + "\n")
    if generated is not None and len(generated):
        contact_sheet(generated, os.path.join(out_dir, f"{stem}_sheet.png"))
    return report
