"""Synthetic imbalanced datasets, stratified splitting, oversampling weights,
and Gaussian noise/blur corruption for test-time distribution shift.

Two generator modes stand in for the real imaging data:

* blob mode: two Gaussian blob families per class in D dimensions; overlap is
  controlled by the within-blob standard deviation.
* image mode: 16x16-style single-channel patches in [0,1] whose class signal
  is a fixed low-frequency pattern with overlapping per-sample amplitudes,
  plus a smooth random background and i.i.d. pixel noise. Pixel noise is the
  dominant nuisance, so additive test-time noise genuinely degrades the
  signal, while blurring mostly preserves it.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from deferbench.errors import (
    ConfigError,
    FormatError,
    InputShapeError,
    StratificationError,
    UnsupportedCorruptionError,
)
from deferbench.rng import child_rng

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)

_MAGIC = b"DFD1"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQIIIQ")  # magic, version, S, D, H, W, C, label_offset

NOISE_SIGMAS = (0.04, 0.08, 0.12, 0.16, 0.20)
BLUR_SIGMAS = (0.5, 1.0, 1.5, 2.0, 2.5)


@dataclass
class Dataset:
    features: np.ndarray  # (S, D) float64
    labels: np.ndarray  # (S,) int64 in {0, 1}
    spatial_shape: Optional[tuple[int, int, int]] = None  # (H, W, C), H*W*C == D
    splits: Optional[np.ndarray] = None  # (S,) int64 in {TRAIN, VAL, TEST}
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InputShapeError("labels must be one per feature row")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ConfigError("labels must be binary")
        if self.spatial_shape is not None:
            h, w, c = self.spatial_shape
            if h * w * c != self.features.shape[1]:
                raise ConfigError(
                    f"spatial shape {self.spatial_shape} does not match D={self.features.shape[1]}"
                )
        if self.splits is not None:
            self.splits = np.asarray(self.splits, dtype=np.int64)
            if self.splits.shape != (self.features.shape[0],):
                raise InputShapeError("split tags must be one per row")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def split_mask(self, which: int) -> np.ndarray:
        if self.splits is None:
            raise ConfigError("dataset has no split tags; call split() first")
        return self.splits == which

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(
            features=self.features[mask].copy(),
            labels=self.labels[mask].copy(),
            spatial_shape=self.spatial_shape,
            splits=None,
            provenance=self.provenance,
        )

    def copy(self) -> "Dataset":
        return Dataset(
            features=self.features.copy(),
            labels=self.labels.copy(),
            spatial_shape=self.spatial_shape,
            splits=None if self.splits is None else self.splits.copy(),
            provenance=self.provenance,
        )


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings. spatial_shape=None gives blob mode, else image mode.

    overlap_scale multiplies every stochastic spread, so 0 makes the classes
    separable. In blob mode family_spread places the two blobs of each class;
    zero overlap with zero family spread collapses each class to a point and
    is rejected.
    """

    n_samples: int = 10_000
    positive_fraction: float = 0.03
    seed: int = 0
    overlap_scale: float = 1.0
    spatial_shape: Optional[tuple[int, int, int]] = (16, 16, 1)
    # blob mode geometry
    n_features: int = 8
    class_separation: float = 3.0
    family_spread: float = 1.5
    # image mode texture; the defaults put a plain classifier near 0.93 test
    # bAcc with real amplitude overlap, so deferral has both room and signal
    signal_gap: float = 0.08
    amplitude_jitter: float = 0.02
    background_amp: float = 0.02
    pixel_noise: float = 0.08

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("need at least 2 samples")
        if not (0.0 < self.positive_fraction < 0.5):
            raise ConfigError(
                f"positive_fraction must lie in (0, 0.5), got {self.positive_fraction}"
            )
        if self.overlap_scale < 0.0:
            raise ConfigError("overlap_scale must be non-negative")
        if self.spatial_shape is None:
            if self.overlap_scale == 0.0 and self.family_spread == 0.0:
                raise ConfigError("degenerate geometry: zero overlap scale with zero spread")
            if self.n_features < 2:
                raise ConfigError("blob mode needs at least 2 features")
        else:
            h, w, c = self.spatial_shape
            if h < 4 or w < 4 or c < 1:
                raise ConfigError(f"spatial shape too small: {self.spatial_shape}")


def _draw_labels(rng, n: int, positive_fraction: float) -> np.ndarray:
    n_pos = int(np.floor(n * positive_fraction + 0.5))
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    return rng.permutation(labels)


def _blob_features(rng, spec: SynthSpec, labels: np.ndarray) -> np.ndarray:
    n, d = labels.shape[0], spec.n_features
    centers = np.zeros((2, 2, d))  # [class, blob, dim]
    centers[0, :, 0] = -spec.class_separation / 2.0
    centers[1, :, 0] = +spec.class_separation / 2.0
    centers[:, 0, 1] = -spec.family_spread
    centers[:, 1, 1] = +spec.family_spread
    blob = rng.integers(0, 2, size=n)
    x = centers[labels, blob] + spec.overlap_scale * rng.standard_normal((n, d))
    return x


def low_frequency_pattern(height: int, width: int) -> np.ndarray:
    """Smooth positive bump, unit peak: the class signal of the image generator."""
    rows = np.sin(np.pi * (np.arange(height) + 0.5) / height)
    cols = np.sin(np.pi * (np.arange(width) + 0.5) / width)
    return np.outer(rows, cols)


def _smooth_background(rng, n: int, height: int, width: int) -> np.ndarray:
    """Per-sample low-frequency field: coarse 4x4 Gaussian grid, bilinear upsample."""
    grid = rng.standard_normal((n, 4, 4))
    ys = np.clip((np.arange(height) + 0.5) / height * 4 - 0.5, 0.0, 3.0)
    xs = np.clip((np.arange(width) + 0.5) / width * 4 - 0.5, 0.0, 3.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, 3)
    x1 = np.minimum(x0 + 1, 3)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    g00 = grid[:, y0][:, :, x0]
    g01 = grid[:, y0][:, :, x1]
    g10 = grid[:, y1][:, :, x0]
    g11 = grid[:, y1][:, :, x1]
    return (1 - wy) * ((1 - wx) * g00 + wx * g01) + wy * ((1 - wx) * g10 + wx * g11)


def _image_features(rng, spec: SynthSpec, labels: np.ndarray) -> np.ndarray:
    h, w, c = spec.spatial_shape
    n = labels.shape[0]
    pattern = low_frequency_pattern(h, w)
    amplitude = spec.signal_gap * labels + (
        spec.amplitude_jitter * spec.overlap_scale * rng.standard_normal(n)
    )
    images = 0.5 + amplitude[:, None, None] * pattern[None, :, :]
    images = images + spec.background_amp * spec.overlap_scale * _smooth_background(rng, n, h, w)
    images = np.repeat(images[..., None], c, axis=3)
    images = images + spec.pixel_noise * spec.overlap_scale * rng.standard_normal((n, h, w, c))
    return np.clip(images, 0.0, 1.0).reshape(n, h * w * c)


def generate(spec: SynthSpec) -> Dataset:
    """Synthetic dataset with an exact positive count of round(n * positive_fraction)."""
    rng = child_rng(spec.seed, "generate")
    labels = _draw_labels(rng, spec.n_samples, spec.positive_fraction)
    if spec.spatial_shape is None:
        features = _blob_features(rng, spec, labels)
        mode = "blobs"
    else:
        features = _image_features(rng, spec, labels)
        mode = "image"
    return Dataset(
        features=features,
        labels=labels,
        spatial_shape=spec.spatial_shape,
        provenance=f"synthetic-{mode} seed={spec.seed}",
    )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(dataset: Dataset, seed: int, fractions=SPLIT_FRACTIONS) -> Dataset:
    """Random stratified 70/20/10 split; every split receives both classes.

    Sizes follow per-class cumulative rounding, so overall split sizes are
    within one sample of the exact fractions. If a class would miss a split,
    one sample is moved from that class's largest split; classes with fewer
    than 3 samples cannot be stratified and raise.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three values summing to 1, got {fractions}")
    rng = child_rng(seed, "split")
    splits = np.full(dataset.n_samples, -1, dtype=np.int64)

    for cls in (0, 1):
        idx = np.nonzero(dataset.labels == cls)[0]
        n_c = idx.shape[0]
        if n_c < 3:
            raise StratificationError(
                f"class {cls} has {n_c} samples; cannot cover train/val/test"
            )
        idx = rng.permutation(idx)
        t1 = _round_half_up(fractions[0] * n_c)
        t2 = _round_half_up((fractions[0] + fractions[1]) * n_c)
        sizes = [t1, t2 - t1, n_c - t2]
        # ensure every split sees this class, stealing from the largest split
        for s in range(3):
            while sizes[s] == 0:
                donor = int(np.argmax(sizes))
                sizes[donor] -= 1
                sizes[s] += 1
        bounds = np.cumsum(sizes)
        splits[idx[: bounds[0]]] = TRAIN
        splits[idx[bounds[0] : bounds[1]]] = VAL
        splits[idx[bounds[1] :]] = TEST

    out = dataset.copy()
    out.splits = splits
    return out


def oversample_weights(labels) -> np.ndarray:
    """Per-sample weight 1 / count(own class); class totals then sum to 1 each."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=2)
    if np.any(counts == 0):
        raise ConfigError("both classes must be present to compute oversampling weights")
    return 1.0 / counts[labels]


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    """Corruption kind and severity level; level 0 is the identity.

    Magnitude tables map levels 1..5 to the noise standard deviation on the
    [0,1] intensity scale, or the blur kernel standard deviation in pixels.
    """

    kind: str  # "noise" | "blur"
    level: int
    noise_sigmas: tuple[float, ...] = NOISE_SIGMAS
    blur_sigmas: tuple[float, ...] = BLUR_SIGMAS

    def __post_init__(self):
        if self.kind not in ("noise", "blur"):
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        table = self.noise_sigmas if self.kind == "noise" else self.blur_sigmas
        if not (0 <= self.level <= len(table)):
            raise ConfigError(f"level must lie in 0..{len(table)}, got {self.level}")
        if any(b <= a for a, b in zip(table, table[1:])) or any(v <= 0 for v in table):
            raise ConfigError("corruption magnitudes must be positive and increasing")

    @property
    def parameter(self) -> float:
        """Resolved noise/blur standard deviation; 0.0 at level 0."""
        if self.level == 0:
            return 0.0
        table = self.noise_sigmas if self.kind == "noise" else self.blur_sigmas
        return float(table[self.level - 1])


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(images: np.ndarray, sigma: float) -> np.ndarray:
    """Separable per-channel Gaussian blur with reflect padding, no clipping.

    images: (S, H, W, C). The kernel is normalized after truncation, so a
    constant image is a fixed point and the operator is linear.
    """
    if images.ndim != 4:
        raise InputShapeError(f"expected (S, H, W, C) images, got shape {images.shape}")
    kernel = gaussian_kernel(sigma)
    radius = (kernel.shape[0] - 1) // 2
    _, h, w, _ = images.shape
    if radius >= h or radius >= w:
        raise ConfigError(f"blur sigma {sigma} needs radius {radius} >= image side")

    out = np.pad(images, ((0, 0), (radius, radius), (0, 0), (0, 0)), mode="reflect")
    acc = np.zeros_like(images)
    for tap, weight in enumerate(kernel):
        acc += weight * out[:, tap : tap + h, :, :]
    out = np.pad(acc, ((0, 0), (0, 0), (radius, radius), (0, 0)), mode="reflect")
    acc = np.zeros_like(images)
    for tap, weight in enumerate(kernel):
        acc += weight * out[:, :, tap : tap + w, :]
    return acc


def corrupt(dataset: Dataset, spec: CorruptionSpec, seed: int) -> Dataset:
    """Corrupted copy of every row; labels, splits and shapes are untouched.

    Level 0 returns a byte-identical copy. Noise adds clamped i.i.d. Gaussian
    pixel noise; blur convolves each channel with a normalized Gaussian
    kernel (radius ceil(3*sigma), reflect padding) and needs a spatial shape.
    """
    if spec.level == 0:
        return dataset.copy()
    if spec.kind == "noise":
        rng = child_rng(seed, "corrupt", spec.kind, spec.level)
        noise = rng.normal(0.0, spec.parameter, size=dataset.features.shape)
        features = np.clip(dataset.features + noise, 0.0, 1.0)
    else:
        if dataset.spatial_shape is None:
            raise UnsupportedCorruptionError("blur requires a dataset with a spatial shape")
        h, w, c = dataset.spatial_shape
        images = dataset.features.reshape(dataset.n_samples, h, w, c)
        features = gaussian_blur(images, spec.parameter).reshape(dataset.n_samples, -1)
        features = np.clip(features, 0.0, 1.0)
    out = dataset.copy()
    out.features = features
    out.provenance = f"{dataset.provenance}+{spec.kind}{spec.level}"
    return out


# ---------------------------------------------------------------------------
# Dataset container ("DFD1") and CSV import
# ---------------------------------------------------------------------------


def write_dataset(path, dataset: Dataset) -> None:
    """Fixed 44-byte header, float32 features row-major, labels as bytes."""
    s, d = dataset.features.shape
    h, w, c = dataset.spatial_shape if dataset.spatial_shape is not None else (0, 0, 0)
    label_offset = _HEADER.size + s * d * 4
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, s, d, h, w, c, label_offset))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, s, d, h, w, c, label_offset = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad magic, not a DFD1 dataset")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported DFD1 version {version}")
        raw = fh.read(s * d * 4)
        if len(raw) != s * d * 4:
            raise FormatError(f"{path}: truncated feature payload")
        fh.seek(label_offset)
        labels = np.frombuffer(fh.read(s), dtype=np.uint8)
        if labels.shape[0] != s:
            raise FormatError(f"{path}: truncated labels")
    features = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(s, d)
    spatial = (h, w, c) if h * w * c > 0 else None
    return Dataset(
        features=features,
        labels=labels.astype(np.int64),
        spatial_shape=spatial,
        provenance=str(path),
    )


def read_csv_dataset(path) -> Dataset:
    """External data as CSV with columns f0..f{D-1},label."""
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label" or not all(
            name == f"f{i}" for i, name in enumerate(header[:-1])
        ):
            raise FormatError(f"{path}: expected header f0..fD-1,label")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}: row {lineno} has {len(row)} fields")
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        provenance=str(path),
    )
