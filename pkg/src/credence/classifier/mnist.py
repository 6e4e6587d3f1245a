"""IDX image/label files and the nearest-other-label robustness statistic.

The oracle robustness of a point is half its L2 distance to the nearest
training point with a different label: no classifier can be robust beyond
that radius, so the distribution of these radii calibrates meaningful
attack budgets.  The all-pairs scan runs blockwise on the Gram matrix,
which keeps it exact while letting the BLAS do the heavy lifting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def read_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file as a (count, rows, cols) uint8 array."""
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != IMAGES_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x}")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise ValueError("truncated image file")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", fh.read(8))
        if magic != LABELS_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x}")
        data = fh.read(count)
    if len(data) != count:
        raise ValueError("truncated label file")
    return np.frombuffer(data, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def nearest_other_label_distances(
    points: np.ndarray, labels: np.ndarray, block: int = 1024
) -> np.ndarray:
    """Exact L2 distance from each row to the nearest differently labeled row.

    Rows with no differently labeled partner get infinity.  Distances are
    assembled from squared norms and a blockwise Gram product in float32,
    then clipped at zero before the square root.
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    labels = np.asarray(labels)
    n = len(points)
    if n != len(labels):
        raise ValueError("one label per point required")
    sq = np.einsum("ij,ij->i", points, points)
    best = np.full(n, np.inf, dtype=np.float32)
    for start in range(0, n, block):
        stop = min(start + block, n)
        gram = points[start:stop] @ points.T
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * gram
        same = labels[start:stop, None] == labels[None, :]
        d2[same] = np.inf
        best[start:stop] = np.sqrt(np.clip(d2.min(axis=1), 0.0, None))
    return best.astype(np.float64)


@dataclass(frozen=True)
class OracleRobustnessStats:
    """Fractions of points whose oracle radius clears each threshold."""

    count: int
    thresholds: tuple
    fractions: tuple
    single_class: bool

    def lines(self) -> list:
        out = [f"points: {self.count}"]
        if self.single_class:
            out.append("single class present: all radii infinite")
        for threshold, fraction in zip(self.thresholds, self.fractions):
            out.append(f"oracle radius > {threshold}: {fraction:.4f}")
        return out


def oracle_robustness_stats(
    points: np.ndarray,
    labels: np.ndarray,
    thresholds=(2.0, 2.5, 3.0),
) -> OracleRobustnessStats:
    """Distribution of half-distances to the nearest other-label point."""
    labels = np.asarray(labels)
    single_class = len(np.unique(labels)) < 2
    if single_class:
        fractions = tuple(1.0 for _ in thresholds)
        return OracleRobustnessStats(
            count=len(labels),
            thresholds=tuple(thresholds),
            fractions=fractions,
            single_class=True,
        )
    radii = nearest_other_label_distances(points, labels) / 2.0
    fractions = tuple(float((radii > t).mean()) for t in thresholds)
    return OracleRobustnessStats(
        count=len(labels),
        thresholds=tuple(thresholds),
        fractions=fractions,
        single_class=False,
    )


def load_mnist_training_matrix(images_path, labels_path) -> tuple:
    """Flattened [0, 1] image rows and labels from a pair of IDX files."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError("image and label counts differ")
    flat = images.reshape(len(images), -1).astype(np.float32) / 255.0
    return flat, labels
