"""Seeded synthetic segmentation data: blob "organs" on a dark background.

Each foreground class draws one or more ellipse or convex-polygon blobs with
a class-specific intensity; labels are the exact blob masks. The same seed
always yields byte-identical samples.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .serialization import load_tensor, save_tensor
from .tensor import ConfigError

BACKGROUND_INTENSITY = 0.08
BLOB_RADIUS_FRACTION = (0.10, 0.22)  # blob semi-axis range as a fraction of image size


@dataclass(frozen=True)
class SynthSpec:
    image_size: int = 64
    num_classes: int = 4
    blobs_per_class: tuple[int, int] = (1, 2)
    noise: float = 0.05
    num_train: int = 8
    num_val: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size < 16:
            raise ConfigError(f"image_size too small: {self.image_size}")
        lo, hi = self.blobs_per_class
        if not 1 <= lo <= hi:
            raise ConfigError(f"blobs_per_class range invalid: {self.blobs_per_class}")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "num_classes": self.num_classes,
            "blobs_per_class": list(self.blobs_per_class),
            "noise": self.noise,
            "num_train": self.num_train,
            "num_val": self.num_val,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthSpec":
        unknown = set(d) - set(SynthSpec.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown data spec key(s): {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return SynthSpec(**d)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32
    label: np.ndarray  # (H, W) int64 in [0, K)


def class_intensity(k: int, num_classes: int) -> float:
    return 0.25 + 0.7 * (k - 1) / max(num_classes - 2, 1)


def _ellipse_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    lo, hi = BLOB_RADIUS_FRACTION
    a = rng.uniform(lo * size, hi * size)
    b = rng.uniform(lo * size, hi * size)
    theta = rng.uniform(0, np.pi)
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0


def _polygon_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    from scipy.spatial import ConvexHull

    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    n_vert = int(rng.integers(4, 8))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vert))
    lo, hi = BLOB_RADIUS_FRACTION
    radii = rng.uniform(lo * size, hi * size, size=n_vert)
    pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    hull = pts[ConvexHull(pts).vertices]  # counterclockwise; convex by construction
    yy, xx = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), dtype=bool)
    for i in range(len(hull)):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % len(hull)]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def render_sample(spec: SynthSpec, rng: np.random.Generator) -> Sample:
    size = spec.image_size
    label = np.zeros((size, size), dtype=np.int64)
    intensity = np.full((size, size), BACKGROUND_INTENSITY, dtype=np.float64)
    lo, hi = spec.blobs_per_class
    for k in range(1, spec.num_classes):
        for _ in range(int(rng.integers(lo, hi + 1))):
            # resample heavily overlapping placements so no class is reduced
            # to slivers by a later blob painting over it
            for _ in range(20):
                mask = _ellipse_mask(size, rng) if rng.random() < 0.5 else _polygon_mask(size, rng)
                overlap = (mask & (label > 0)).sum()
                if overlap <= 0.25 * mask.sum():
                    break
            label[mask] = k
            intensity[mask] = class_intensity(k, spec.num_classes)
    if spec.noise > 0:
        intensity = intensity + rng.normal(0.0, spec.noise, size=intensity.shape)
    image = np.repeat(intensity[None].astype(np.float32), 3, axis=0)
    return Sample(image=image, label=label)


def gen_dataset(spec: SynthSpec) -> tuple[list[Sample], list[Sample]]:
    """Deterministic train/val sample lists for a spec."""
    rng = np.random.default_rng(spec.seed)
    train = [render_sample(spec, rng) for _ in range(spec.num_train)]
    val = [render_sample(spec, rng) for _ in range(spec.num_val)]
    return train, val


def collate(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.label for s in samples])
    return images, labels


def augment_sample(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random horizontal/vertical flips and a rotation within +/-15 degrees."""
    image, label = sample.image, sample.label
    if rng.random() < 0.5:
        image, label = image[:, :, ::-1], label[:, ::-1]
    if rng.random() < 0.5:
        image, label = image[:, ::-1, :], label[::-1, :]
    angle = rng.uniform(-15.0, 15.0) * np.pi / 180.0
    h, w = label.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_y = np.cos(angle) * (yy - cy) + np.sin(angle) * (xx - cx) + cy
    src_x = -np.sin(angle) * (yy - cy) + np.cos(angle) * (xx - cx) + cx
    iy = np.rint(src_y).astype(int)
    ix = np.rint(src_x).astype(int)
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    iy_c, ix_c = np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)
    new_label = np.where(valid, label[iy_c, ix_c], 0)
    new_image = np.where(valid[None], image[:, iy_c, ix_c], np.float32(BACKGROUND_INTENSITY))
    return Sample(image=np.ascontiguousarray(new_image), label=np.ascontiguousarray(new_label))


# ---------------------------------------------------------------------------
# on-disk cache: stacked tensor dumps plus a manifest with checksums

def save_dataset(path: str, spec: SynthSpec, train: list[Sample], val: list[Sample]) -> None:
    os.makedirs(path, exist_ok=True)
    files = {}
    for split, samples in (("train", train), ("val", val)):
        images, labels = collate(samples)
        files[f"{split}_images"] = (f"{split}_images.mstf", images.astype(np.float32))
        files[f"{split}_labels"] = (f"{split}_labels.mstf", labels.astype(np.float32))
    entries = {}
    for key, (name, arr) in files.items():
        save_tensor(os.path.join(path, name), arr)
        with open(os.path.join(path, name), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        entries[key] = {"file": name, "shape": list(arr.shape), "sha256": digest}
    manifest = {"format": "missformer-dataset", "version": 1, "spec": spec.to_dict(), "files": entries}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str) -> tuple[SynthSpec, list[Sample], list[Sample]]:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    spec = SynthSpec.from_dict(manifest["spec"])
    out = {}
    for key, entry in manifest["files"].items():
        out[key] = load_tensor(os.path.join(path, entry["file"]))
    splits = []
    for split in ("train", "val"):
        images = out[f"{split}_images"].astype(np.float32)
        labels = out[f"{split}_labels"].astype(np.int64)
        splits.append([Sample(i, l) for i, l in zip(images, labels)])
    return spec, splits[0], splits[1]
