"""Synthetic corpora with analytically known class structure.

Two generators: class-conditional Gaussians ("gaussian_blobs") and a radial
two-class problem ("ring_vs_disk"). Both write the standard embedding,
labels, and manifest files, so synthetic corpora flow through the exact same
ingestion path as exported ones. Boundary noise flips a sample's label to a
uniformly drawn other class with the given probability: class-symmetric
noise that blurs the decision boundary without relocating it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fileformats import DatasetManifest, write_embeddings, write_labels, write_manifest

GAUSSIAN_BLOBS = "gaussian_blobs"
RING_VS_DISK = "ring_vs_disk"


@dataclass
class SyntheticSpec:
    kind: str = GAUSSIAN_BLOBS
    dim: int = 16
    classes: int = 3
    samples_per_class: int = 10_000
    cluster_spread: float = 1.0
    center_scale: float = 3.0
    boundary_noise: float = 0.0
    test_per_class: int = 0  # 0 -> samples_per_class // 5
    seed: int = 0
    name: str = ""

    def validate(self) -> None:
        if self.kind not in (GAUSSIAN_BLOBS, RING_VS_DISK):
            raise ConfigurationError(f"unknown synthetic kind {self.kind!r}")
        if self.dim < 2:
            raise ConfigurationError("dimension must be >= 2")
        if self.classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.kind == RING_VS_DISK and self.classes != 2:
            raise ConfigurationError("ring_vs_disk is a 2-class problem")
        if self.cluster_spread <= 0:
            raise ConfigurationError("cluster spread must be > 0")
        if not 0.0 <= self.boundary_noise < 1.0:
            raise ConfigurationError("boundary noise must be in [0, 1)")

    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.kind}_c{self.classes}_d{self.dim}_n{self.samples_per_class}_s{self.seed}"


def _blob_samples(spec: SyntheticSpec, centers: np.ndarray, per_class: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    points = []
    gold = []
    for cls in range(spec.classes):
        pts = centers[cls] + rng.normal(0.0, spec.cluster_spread,
                                        size=(per_class, spec.dim))
        points.append(pts)
        gold.append(np.full(per_class, cls, dtype=np.int64))
    X = np.concatenate(points)
    y = np.concatenate(gold)
    perm = rng.permutation(len(y))
    return X[perm], y[perm]


def _radial_samples(spec: SyntheticSpec, per_class: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = 2 * per_class
    directions = rng.normal(size=(n, spec.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = np.concatenate([
        rng.uniform(0.0, 1.5, size=per_class),       # disk
        rng.uniform(2.0, 3.0, size=per_class),       # shell
    ]) * spec.cluster_spread
    y = np.concatenate([np.zeros(per_class, dtype=np.int64),
                        np.ones(per_class, dtype=np.int64)])
    X = directions * radii[:, None]
    perm = rng.permutation(n)
    return X[perm], y[perm]


def _apply_boundary_noise(spec: SyntheticSpec, y: np.ndarray, classes: int,
                          rng: np.random.Generator) -> np.ndarray:
    if spec.boundary_noise == 0.0:
        return y
    flip = rng.random(len(y)) < spec.boundary_noise
    noisy = y.copy()
    # draw from the other classes uniformly via a shifted offset
    offsets = rng.integers(1, classes, size=len(y))
    noisy[flip] = (y[flip] + offsets[flip]) % classes
    return noisy


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write embedding, labels, and manifest files; returns the manifest path."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    test_per_class = spec.test_per_class or max(1, spec.samples_per_class // 5)

    if spec.kind == GAUSSIAN_BLOBS:
        centers = rng.normal(0.0, spec.center_scale, size=(spec.classes, spec.dim))
        X, y = _blob_samples(spec, centers, spec.samples_per_class, rng)
        Xt, yt = _blob_samples(spec, centers, test_per_class, rng)
    else:
        X, y = _radial_samples(spec, spec.samples_per_class, rng)
        Xt, yt = _radial_samples(spec, test_per_class, rng)
    y = _apply_boundary_noise(spec, y, spec.classes, rng)
    # test labels stay clean so reported accuracy measures class recovery

    name = spec.label()
    write_embeddings(out / "train.aemb", X)
    write_labels(out / "train.labels.tsv", np.arange(len(y)), list(y))
    write_embeddings(out / "test.aemb", Xt)
    write_labels(out / "test.labels.tsv", np.arange(len(yt)), list(yt))
    manifest = DatasetManifest(
        name=name,
        task="classification",
        num_classes=spec.classes,
        embeddings_path="train.aemb",
        labels_path="train.labels.tsv",
        dim=spec.dim,
        count=len(y),
        test_embeddings_path="test.aemb",
        test_labels_path="test.labels.tsv",
        test_count=len(yt),
    )
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, manifest)
    return manifest_path
