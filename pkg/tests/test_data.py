import numpy as np
import pytest
import torch

from synsis.data import (ArrayDataset, PairedSample, PairingError, PaletteError,
                         SemanticLayout, image_to_uint8, load_dataset,
                         one_hot_encode, resize_sample, save_dataset,
                         split_synthetic)
from synsis.toy import make_toy_domains, toy_palette


def test_one_hot_basic():
    ids = np.array([[0, 1], [1, 2]])
    onehot = one_hot_encode(ids, 3)
    assert np.array_equal(onehot[0], [[1, 0], [0, 0]])
    assert np.array_equal(onehot[1], [[0, 1], [1, 0]])
    assert np.array_equal(onehot[2], [[0, 0], [0, 1]])


def test_one_hot_constant():
    onehot = one_hot_encode(np.zeros((4, 6), dtype=int), 2)
    assert np.all(onehot[0] == 1)
    assert np.all(onehot[1] == 0)


def test_one_hot_sums_to_one():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 34, size=(8, 8))
    onehot = one_hot_encode(ids, 34)
    # brute-force per-pixel check
    for y in range(8):
        for x in range(8):
            column = onehot[:, y, x]
            assert column.sum() == 1.0
            assert column[ids[y, x]] == 1.0


@pytest.mark.parametrize("num_classes", [2, 5, 34])
def test_one_hot_argmax_identity(num_classes):
    rng = np.random.default_rng(num_classes)
    ids = rng.integers(0, num_classes, size=(13, 9))
    assert np.array_equal(one_hot_encode(ids, num_classes).argmax(axis=0), ids)


def test_one_hot_out_of_range_names_pixel():
    ids = np.array([[0, 1], [5, 2]])
    with pytest.raises(PaletteError, match=r"class id 5 at pixel \(1, 0\)"):
        one_hot_encode(ids, 3)
    with pytest.raises(PaletteError):
        one_hot_encode(np.array([[-1]]), 3)


@pytest.fixture()
def disk_datasets(tmp_path, toy_domains):
    syn, real = toy_domains
    syn_small = ArrayDataset("paired_synthetic", [syn.sample(i) for i in range(10)],
                             syn.palette)
    real_small = ArrayDataset("unpaired_real", [real.sample(i) for i in range(7)],
                              real.palette)
    save_dataset(syn_small, tmp_path / "syn")
    save_dataset(real_small, tmp_path / "real")
    return tmp_path / "syn", tmp_path / "real"


def test_load_paired_dataset(disk_datasets):
    syn_root, _ = disk_datasets
    handle = load_dataset(syn_root, "paired_synthetic", toy_palette(5))
    assert handle.kind == "paired_synthetic"
    assert handle.size == 10
    layout, image = handle.sample(0)
    assert layout.ids.shape == (64, 128)
    assert image.shape == (3, 64, 128)
    assert image.min() >= -1.0 and image.max() <= 1.0


def test_load_real_dataset(disk_datasets):
    _, real_root = disk_datasets
    handle = load_dataset(real_root, "unpaired_real", toy_palette(5))
    assert handle.kind == "unpaired_real"
    assert handle.size == 7
    assert handle.sample(0).shape == (3, 64, 128)


def test_missing_label_is_pairing_error(disk_datasets):
    syn_root, _ = disk_datasets
    (syn_root / "labels" / "0005.png").unlink()
    with pytest.raises(PairingError, match="0005"):
        load_dataset(syn_root, "paired_synthetic", toy_palette(5))


def test_unknown_class_id_is_palette_error(disk_datasets):
    syn_root, _ = disk_datasets
    handle = load_dataset(syn_root, "paired_synthetic", toy_palette(3))
    with pytest.raises(PaletteError):
        for i in range(handle.size):
            handle.sample(i)


def test_ordering_is_lexicographic(disk_datasets, toy_domains):
    syn_root, _ = disk_datasets
    handle = load_dataset(syn_root, "paired_synthetic", toy_palette(5))
    syn, _ = toy_domains
    for i in (0, 3, 9):
        assert np.array_equal(handle.sample(i).layout.ids, syn.sample(i).layout.ids)


def test_split_arithmetic():
    palette = toy_palette(2)
    big = ArrayDataset("paired_synthetic", [None] * 7000, palette)
    train, test = split_synthetic(big, 5000)
    assert train.size == 2000 and test.size == 5000


def test_split_takes_last_samples():
    palette = toy_palette(2)
    handle = ArrayDataset("paired_synthetic", list(range(10)), palette)
    train, test = split_synthetic(handle, 2)
    assert [test.sample(i) for i in range(2)] == [8, 9]
    assert [train.sample(i) for i in range(8)] == list(range(8))


def test_split_disjoint_union():
    palette = toy_palette(2)
    handle = ArrayDataset("paired_synthetic", list(range(20)), palette)
    train, test = split_synthetic(handle, 7)
    seen = [train.sample(i) for i in range(train.size)] + \
           [test.sample(i) for i in range(test.size)]
    assert seen == list(range(20))


def test_split_too_large_raises():
    handle = ArrayDataset("paired_synthetic", list(range(5)), toy_palette(2))
    with pytest.raises(ValueError):
        split_synthetic(handle, 5)


def test_resize_full_frame():
    rng = np.random.default_rng(0)
    image = rng.uniform(-1, 1, size=(3, 1052, 1914)).astype(np.float32)
    layout = SemanticLayout(rng.integers(0, 34, size=(1052, 1914)), 34)
    out_img, out_layout = resize_sample(image, layout, (256, 512))
    assert out_img.shape == (3, 256, 512)
    assert out_layout.ids.shape == (256, 512)


def test_resize_preserves_single_class():
    image = np.zeros((3, 32, 32), dtype=np.float32)
    layout = SemanticLayout(np.full((32, 32), 3), 5)
    _, out = resize_sample(image, layout, (64, 128))
    assert np.all(out.ids == 3)


def test_resize_never_invents_ids():
    # checkerboard downsampled 2x: every output id must come from the input
    ids = np.indices((64, 64)).sum(axis=0) % 2 * 3  # classes {0, 3}
    layout = SemanticLayout(ids, 5)
    image = np.zeros((3, 64, 64), dtype=np.float32)
    _, out = resize_sample(image, layout, (32, 32))
    assert set(np.unique(out.ids)) <= set(np.unique(ids))


def test_resize_recomputes_onehot():
    layout = SemanticLayout(np.full((32, 32), 2), 5)
    _, out = resize_sample(np.zeros((3, 32, 32), np.float32), layout, (16, 16))
    onehot = out.onehot()
    assert onehot.shape == (5, 16, 16)
    assert np.all(onehot.argmax(axis=0) == 2)


def test_resize_rejects_bad_target():
    layout = SemanticLayout(np.zeros((32, 32), dtype=int), 2)
    image = np.zeros((3, 32, 32), dtype=np.float32)
    for target in ((30, 64), (64, 30), (0, 16)):
        with pytest.raises(ValueError):
            resize_sample(image, layout, target)


def test_image_round_trip_quantized():
    rng = np.random.default_rng(3)
    img = rng.uniform(-1, 1, size=(3, 8, 8)).astype(np.float32)
    u8 = image_to_uint8(img)
    back = (u8.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)
    assert np.abs(back - img).max() <= 1.0 / 127.5
