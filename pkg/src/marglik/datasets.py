"""Dataset generation and ingestion for the model-selection experiments.

Synthetic feature-selection data (targets drawn uniformly, a block of
target-plus-noise informative features, a block of pure-noise features),
a well-specified prior-variance regression task, random Fourier features,
and a strict big-endian IDX reader/writer for MNIST-style files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .blr import BlrModel, Dataset

__all__ = [
    "FeatureSelectionConfig",
    "RffConfig",
    "gen_feature_selection",
    "prefix_feature_map",
    "prefix_features",
    "rff_embed",
    "load_mnist_idx",
    "write_idx_images",
    "write_idx_labels",
    "filter_binary",
    "gen_prior_variance_task",
]

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass(frozen=True)
class FeatureSelectionConfig:
    """Knobs for the informative-vs-noise feature generator.

    ``k_informative`` may exceed ``d_total`` in the config; the generator
    clamps it, producing all-informative features and no noise block.
    sigma0/sigma1 are standard deviations.
    """

    n: int = 30
    d_total: int = 30
    k_informative: int = 15
    sigma0: float = 1.0
    sigma1: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d_total < 1:
            raise ValueError("n and d_total must be positive")
        if self.k_informative < 0:
            raise ValueError("k_informative must be nonnegative")
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ValueError("noise scales must be nonnegative")


def gen_feature_selection(cfg: FeatureSelectionConfig) -> Dataset:
    """Targets y ~ U[0, 1]; features [y + N(0, s0^2) x k, N(0, s1^2) x (d-k)]."""
    rng = np.random.default_rng(cfg.seed)
    k = min(cfg.k_informative, cfg.d_total)
    y = rng.uniform(0.0, 1.0, size=cfg.n)
    informative = y[:, None] + cfg.sigma0 * rng.standard_normal((cfg.n, k))
    noise = cfg.sigma1 * rng.standard_normal((cfg.n, cfg.d_total - k))
    return Dataset(np.concatenate([informative, noise], axis=1), y)


def prefix_feature_map(x: np.ndarray, k: int) -> np.ndarray:
    """First k coordinates of a feature vector."""
    x = np.asarray(x, dtype=float)
    if not 1 <= k <= x.shape[-1]:
        raise ValueError(f"k = {k} out of range 1..{x.shape[-1]}")
    return x[..., :k]


def prefix_features(data: Dataset, k: int) -> Dataset:
    """Dataset restricted to the first k feature columns."""
    return Dataset(prefix_feature_map(data.features, k), data.targets)


@dataclass(frozen=True)
class RffConfig:
    """Random Fourier feature map: ``frequency`` is the inverse lengthscale
    scaling of the Gaussian spectral draws."""

    num_features: int
    frequency: float
    seed: int = 0

    def __post_init__(self):
        if self.num_features < 1:
            raise ValueError("num_features must be >= 1")
        if self.frequency <= 0.0:
            raise ValueError("frequency must be positive")


def rff_embed(X: np.ndarray, cfg: RffConfig) -> np.ndarray:
    """sqrt(2/m) cos(w'x + b) features with w ~ N(0, frequency^2 I), b ~ U[0, 2pi).

    The empirical kernel phi(x)'phi(x2) converges to
    exp(-frequency^2 ||x - x2||^2 / 2) as num_features grows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(cfg.seed)
    omega = cfg.frequency * rng.standard_normal((X.shape[1], cfg.num_features))
    b = rng.uniform(0.0, 2.0 * np.pi, size=cfg.num_features)
    return np.sqrt(2.0 / cfg.num_features) * np.cos(X @ omega + b)


def _read_be_u32(buf: bytes, offset: int) -> int:
    return struct.unpack_from(">I", buf, offset)[0]


def load_mnist_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files into ([0,1] floats, labels).

    Images flatten row-major to (n, rows*cols). Rejects wrong magics,
    count mismatches between the two files, and any file whose byte length
    disagrees with its declared counts.
    """
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lab_buf = fh.read()
    if len(img_buf) < 16:
        raise ValueError(f"truncated image file {images_path}")
    if len(lab_buf) < 8:
        raise ValueError(f"truncated label file {labels_path}")
    magic = _read_be_u32(img_buf, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise ValueError(f"bad image magic {magic} (expected {IDX_IMAGE_MAGIC})")
    n, rows, cols = (_read_be_u32(img_buf, o) for o in (4, 8, 12))
    if len(img_buf) != 16 + n * rows * cols:
        raise ValueError(f"image file length {len(img_buf)} disagrees with declared {n}x{rows}x{cols}")
    magic = _read_be_u32(lab_buf, 0)
    if magic != IDX_LABEL_MAGIC:
        raise ValueError(f"bad label magic {magic} (expected {IDX_LABEL_MAGIC})")
    n_lab = _read_be_u32(lab_buf, 4)
    if len(lab_buf) != 8 + n_lab:
        raise ValueError(f"label file length {len(lab_buf)} disagrees with declared count {n_lab}")
    if n != n_lab:
        raise ValueError(f"image count {n} != label count {n_lab}")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8)
    return pixels.astype(float) / 255.0, labels.copy()


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (n, rows, cols) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def filter_binary(X: np.ndarray, labels: np.ndarray, zero_label: int = 0, one_label: int = 1):
    """Keep rows labeled with the two classes; targets become 0.0 / 1.0."""
    labels = np.asarray(labels)
    keep = (labels == zero_label) | (labels == one_label)
    return np.asarray(X, dtype=float)[keep], (labels[keep] == one_label).astype(float)


def gen_prior_variance_task(n: int, d: int, true_sigma: float, noise: float, seed: int, variance_grid=None):
    """Well-specified linear data plus a family of prior-variance candidates.

    Weights come from N(0, true_sigma^2 I), features are standard normal,
    targets get N(0, noise^2) observation noise. The returned models share
    the known noise variance and sweep a log-spaced grid of prior
    variances bracketing true_sigma^2 (or an explicit grid).
    """
    if n < 1 or d < 1 or true_sigma <= 0.0 or noise <= 0.0:
        raise ValueError("n, d, true_sigma, noise must be positive")
    rng = np.random.default_rng(seed)
    w = true_sigma * rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    y = X @ w + noise * rng.standard_normal(n)
    if variance_grid is None:
        variance_grid = true_sigma**2 * np.geomspace(1.0 / 16.0, 16.0, 9)
    models = [
        BlrModel.isotropic(d, float(v), noise**2, label=f"prior-var={float(v):g}")
        for v in np.asarray(variance_grid, dtype=float)
    ]
    return Dataset(X, y), models
