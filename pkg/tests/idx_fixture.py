"""Synthetic two-class image fixture in IDX format for hermetic tests."""

import numpy as np

from marglik.datasets import write_idx_images, write_idx_labels


def make_digit_images(n=80, side=8, seed=123):
    """Class-dependent corner blobs plus pixel noise, labels alternating 0/1."""
    rng = np.random.default_rng(seed)
    labels = np.tile(np.array([0, 1], dtype=np.uint8), n // 2 + 1)[:n]
    images = rng.integers(0, 60, size=(n, side, side), dtype=np.int64)
    half = side // 2
    for i in range(n):
        if labels[i] == 0:
            images[i, :half, :half] += 160
        else:
            images[i, half:, half:] += 160
    images += rng.integers(0, 36, size=images.shape, dtype=np.int64)
    return np.clip(images, 0, 255).astype(np.uint8), labels


def write_idx_fixture(dirpath, n=80, side=8, seed=123):
    images, labels = make_digit_images(n, side, seed)
    images_path = f"{dirpath}/train-images-idx3-ubyte"
    labels_path = f"{dirpath}/train-labels-idx1-ubyte"
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)
    return images_path, labels_path
