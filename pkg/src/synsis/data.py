"""Dataset ingestion for a paired synthetic domain and an unpaired real domain.

On-disk layout for both domains:

    <root>/images/*.png   RGB images
    <root>/labels/*.png   single-channel label maps, pixel value = class id
                          (absent for the unpaired real domain)

Images and labels are matched by filename stem; sample order is always
lexicographic by filename, so splits and logs are reproducible without a
manifest. Images are normalized to [-1, 1] at load and stay in that range
through the whole pipeline.
"""

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


class PairingError(RuntimeError):
    """A synthetic image has no matching label file (or vice versa)."""


class PaletteError(ValueError):
    """A label map contains a class id outside the palette."""


@dataclass(frozen=True)
class ClassPalette:
    """Dense class id space 0..C-1 with names and reference colors.

    Colors are only used by the toy renderer and the color-oracle segmenter;
    real datasets never need them to be meaningful.
    """

    num_classes: int
    id_to_name: tuple
    id_to_color: tuple

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.id_to_name) != self.num_classes or len(self.id_to_color) != self.num_classes:
            raise ValueError("palette names/colors must have exactly num_classes entries")
        if len(set(self.id_to_name)) != self.num_classes:
            raise ValueError("class names must be unique")


def one_hot_encode(ids: np.ndarray, num_classes: int) -> np.ndarray:
    """Encode an (H, W) id map as a (C, H, W) float32 one-hot volume."""
    ids = np.asarray(ids)
    bad = (ids < 0) | (ids >= num_classes)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise PaletteError(
            f"class id {int(ids[y, x])} at pixel ({int(y)}, {int(x)}) "
            f"out of range [0, {num_classes})"
        )
    onehot = np.zeros((num_classes,) + ids.shape, dtype=np.float32)
    np.put_along_axis(onehot, ids[None].astype(np.int64), 1.0, axis=0)
    return onehot


@dataclass(eq=False)
class SemanticLayout:
    """Integer class-id map plus its derived one-hot encoding."""

    ids: np.ndarray
    num_classes: int

    def onehot(self) -> np.ndarray:
        return one_hot_encode(self.ids, self.num_classes)

    @property
    def shape(self):
        return self.ids.shape


class PairedSample(NamedTuple):
    layout: SemanticLayout
    image: np.ndarray  # (3, H, W) float32 in [-1, 1]


def image_to_float(rgb_u8: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    return (rgb_u8.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def image_to_uint8(img: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3)."""
    arr = np.clip((np.asarray(img) + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8).transpose(1, 2, 0)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return image_to_float(np.asarray(im.convert("RGB")))


def load_label(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise PaletteError(f"label file {path} is not single-channel")
    return arr.astype(np.int64)


class DatasetHandle:
    """Read-only dataset view. kind is 'paired_synthetic' or 'unpaired_real'.

    paired_synthetic samples are (layout, image) pairs with identical spatial
    size; unpaired_real samples are images only. Sample access is a pure
    function of the index, so concurrent readers are safe.
    """

    kind: str

    @property
    def size(self) -> int:
        raise NotImplementedError

    def __len__(self):
        return self.size

    def sample(self, index: int):
        raise NotImplementedError

    def layout(self, index: int) -> SemanticLayout:
        s = self.sample(index)
        if not isinstance(s, PairedSample):
            raise TypeError(f"{self.kind} dataset has no layouts")
        return s.layout

    def image(self, index: int) -> np.ndarray:
        s = self.sample(index)
        return s.image if isinstance(s, PairedSample) else s


class DirectoryDataset(DatasetHandle):
    def __init__(self, root, kind: str, palette: ClassPalette):
        if kind not in ("paired_synthetic", "unpaired_real"):
            raise ValueError(f"unknown dataset kind {kind!r}")
        self.root = str(root)
        self.kind = kind
        self.palette = palette
        images_dir = os.path.join(self.root, "images")
        if not os.path.isdir(images_dir):
            raise FileNotFoundError(f"missing images directory: {images_dir}")
        self._image_files = sorted(
            f for f in os.listdir(images_dir) if f.lower().endswith(".png")
        )
        if kind == "paired_synthetic":
            labels_dir = os.path.join(self.root, "labels")
            for fname in self._image_files:
                if not os.path.isfile(os.path.join(labels_dir, fname)):
                    raise PairingError(
                        f"synthetic image {fname!r} has no label file in {labels_dir}"
                    )

    @property
    def size(self) -> int:
        return len(self._image_files)

    def sample(self, index: int):
        fname = self._image_files[index]
        image = load_image(os.path.join(self.root, "images", fname))
        if self.kind == "unpaired_real":
            return image
        ids = load_label(os.path.join(self.root, "labels", fname))
        if ids.shape != image.shape[1:]:
            raise PairingError(
                f"{fname!r}: label size {ids.shape} != image size {image.shape[1:]}"
            )
        if ids.max() >= self.palette.num_classes or ids.min() < 0:
            raise PaletteError(
                f"{fname!r}: label contains ids outside [0, {self.palette.num_classes})"
            )
        return PairedSample(SemanticLayout(ids, self.palette.num_classes), image)


class ArrayDataset(DatasetHandle):
    """In-memory dataset, used by the procedural toy-domain generator."""

    def __init__(self, kind: str, samples: list, palette: ClassPalette):
        self.kind = kind
        self._samples = samples
        self.palette = palette

    @property
    def size(self) -> int:
        return len(self._samples)

    def sample(self, index: int):
        return self._samples[index]


class SubsetDataset(DatasetHandle):
    def __init__(self, base: DatasetHandle, indices):
        self.base = base
        self.kind = base.kind
        self.indices = list(indices)
        self.palette = getattr(base, "palette", None)

    @property
    def size(self) -> int:
        return len(self.indices)

    def sample(self, index: int):
        return self.base.sample(self.indices[index])


def load_dataset(root_path, kind: str, palette: ClassPalette) -> DatasetHandle:
    """Open a dataset directory in the standard layout."""
    return DirectoryDataset(root_path, kind, palette)


def split_synthetic(handle: DatasetHandle, test_count: int):
    """Hold out the last `test_count` samples (in the handle's deterministic
    order) as the test split; the rest is the train split."""
    if test_count >= handle.size:
        raise ValueError(
            f"test_count {test_count} must be smaller than dataset size {handle.size}"
        )
    if test_count < 0:
        raise ValueError(f"test_count must be >= 0, got {test_count}")
    cut = handle.size - test_count
    train = SubsetDataset(handle, range(cut))
    test = SubsetDataset(handle, range(cut, handle.size))
    return train, test


def resize_sample(image: np.ndarray, layout: SemanticLayout, target_hw):
    """Resize an image (bilinear) and its layout (nearest-neighbor, so class
    ids stay valid) to target_hw = (H, W); H, W must be divisible by 16."""
    th, tw = target_hw
    if th <= 0 or tw <= 0 or th % 16 or tw % 16:
        raise ValueError(f"target size {th}x{tw} must be positive and divisible by 16")
    img = torch.from_numpy(np.ascontiguousarray(image))[None]
    img = F.interpolate(img, size=(th, tw), mode="bilinear", align_corners=False)
    ids = torch.from_numpy(np.ascontiguousarray(layout.ids))[None, None].float()
    ids = F.interpolate(ids, size=(th, tw), mode="nearest")
    out_ids = ids[0, 0].long().numpy()
    return img[0].numpy(), SemanticLayout(out_ids, layout.num_classes)


def save_dataset(handle: DatasetHandle, root) -> None:
    """Write a dataset to disk in the standard layout (images/ + labels/)."""
    images_dir = os.path.join(str(root), "images")
    os.makedirs(images_dir, exist_ok=True)
    paired = handle.kind == "paired_synthetic"
    if paired:
        labels_dir = os.path.join(str(root), "labels")
        os.makedirs(labels_dir, exist_ok=True)
    width = max(4, len(str(handle.size)))
    for i in range(handle.size):
        fname = f"{i:0{width}d}.png"
        s = handle.sample(i)
        image = s.image if paired else s
        Image.fromarray(image_to_uint8(image)).save(os.path.join(images_dir, fname))
        if paired:
            Image.fromarray(s.layout.ids.astype(np.uint8), mode="L").save(
                os.path.join(labels_dir, fname)
            )
