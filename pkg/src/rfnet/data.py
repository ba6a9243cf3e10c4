"""Deterministic generator of oriented shape images.

Four shape families (bar, L, T, wedge) rendered upright on an S x S grid,
rotated to a target orientation through the shared rotation code, then
perturbed with seeded uniform noise and clamped to [0, 1]. Identical
(seed, class, orientation) triples produce bitwise-identical images.

Dataset files use a fixed little-endian layout (magic "RFND"): u16 version,
u32 count, u16 image size, u16 class count, then per sample u16 class,
f32 orientation, u64 noise seed, and S*S f32 pixels.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .rng import Prng
from .rotation import rotate_array

MAGIC = b"RFND"
FORMAT_VERSION = 1
CLASS_NAMES = ("bar", "L", "T", "wedge")
ORIENTATION_POLICIES = ("uniform_random", "axis_aligned_only")


class FormatError(ValueError):
    """Malformed dataset or checkpoint bytes."""


@dataclass
class ShapeSample:
    image: np.ndarray  # (S, S) float32 in [0, 1]
    class_id: int
    orientation: float  # radians in [0, 2*pi), stored at f32 precision
    noise_seed: int

    def __eq__(self, other):
        return (self.class_id == other.class_id
                and np.float32(self.orientation) == np.float32(other.orientation)
                and self.noise_seed == other.noise_seed
                and self.image.tobytes() == other.image.tobytes())


@dataclass
class Dataset:
    samples: list[ShapeSample]
    split: str
    seed: int
    image_size: int
    num_classes: int

    def __len__(self):
        return len(self.samples)

    def images(self) -> np.ndarray:
        """(N, S, S, 1) float32 batch view of all images."""
        return np.stack([s.image for s in self.samples])[..., None]

    def labels(self) -> np.ndarray:
        return np.array([s.class_id for s in self.samples], dtype=np.int64)

    def orientations(self) -> np.ndarray:
        return np.array([s.orientation for s in self.samples], dtype=np.float32)

    def orientation_targets(self) -> np.ndarray:
        """(N, 2) sin/cos encoding; avoids the wrap discontinuity at 2*pi."""
        th = self.orientations().astype(np.float64)
        return np.stack([np.sin(th), np.cos(th)], axis=1).astype(np.float32)


def class_template(class_id: int, size: int = 32) -> np.ndarray:
    """Canonical upright rendering of one shape family, values in {0, 1}."""
    if not 0 <= class_id < len(CLASS_NAMES):
        raise ValueError(f"class_id must be in [0, {len(CLASS_NAMES)}), got {class_id}")
    if size < 16:
        raise ValueError(f"image size must be >= 16, got {size}")
    s = size / 32.0

    def span(lo, hi):
        return slice(int(round(lo * s)), int(round(hi * s)))

    img = np.zeros((size, size), dtype=np.float32)
    name = CLASS_NAMES[class_id]
    if name == "bar":
        img[span(13, 19), span(6, 26)] = 1.0
    elif name == "L":
        img[span(6, 26), span(13, 19)] = 1.0
        img[span(20, 26), span(13, 26)] = 1.0
    elif name == "T":
        img[span(6, 12), span(6, 26)] = 1.0
        img[span(6, 26), span(13, 19)] = 1.0
    else:  # wedge: triangle with apex pointing +x
        rr, cc = np.mgrid[0:size, 0:size]
        center = (size - 1) / 2.0
        c_lo, c_hi = 6.0 * s, 26.0 * s
        halfwidth = (c_hi - cc) * 0.45
        mask = (cc >= c_lo) & (cc <= c_hi) & (np.abs(rr - center) <= halfwidth)
        img[mask] = 1.0
    return img


def gen_sample(seed: int, class_id: int, orientation: float, noise_level: float = 0.1,
               size: int = 32) -> ShapeSample:
    """Render, rotate counterclockwise, add seeded uniform noise, clamp."""
    if not math.isfinite(orientation):
        raise ValueError(f"orientation must be finite, got {orientation}")
    orientation = float(np.float32(orientation))
    template = class_template(class_id, size)
    img = rotate_array(template, orientation)
    if noise_level > 0:
        noise = Prng(seed).uniform_shaped((size, size), -1.0, 1.0)
        img = img + np.float32(noise_level) * noise.astype(np.float32)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return ShapeSample(image=img, class_id=class_id, orientation=orientation,
                       noise_seed=seed)


def gen_dataset(seed: int, size: int, num_classes: int = 4,
                orientation_policy: str = "uniform_random", noise_level: float = 0.1,
                image_size: int = 32, split: str = "train") -> Dataset:
    """Class-balanced dataset with orientations drawn from the seeded stream."""
    if num_classes < 1 or num_classes > len(CLASS_NAMES):
        raise ValueError(f"num_classes must be in [1, {len(CLASS_NAMES)}]")
    if size < num_classes:
        raise ValueError(f"dataset size {size} smaller than class count {num_classes}")
    if orientation_policy not in ORIENTATION_POLICIES:
        raise ValueError(f"orientation_policy must be one of {ORIENTATION_POLICIES}")
    stream = Prng(seed)
    u = stream.uniform(size)
    noise_seeds = stream.next_u64(size)
    samples = []
    for i in range(size):
        if orientation_policy == "uniform_random":
            theta = u[i] * 2.0 * math.pi
        else:
            theta = math.floor(u[i] * 4.0) * (math.pi / 2.0)
        samples.append(gen_sample(int(noise_seeds[i]), i % num_classes, theta,
                                  noise_level, image_size))
    return Dataset(samples=samples, split=split, seed=seed, image_size=image_size,
                   num_classes=num_classes)


def save_dataset(dataset: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HIHH", FORMAT_VERSION, len(dataset.samples),
                             dataset.image_size, dataset.num_classes))
        for s in dataset.samples:
            fh.write(struct.pack("<HfQ", s.class_id, s.orientation, s.noise_seed))
            fh.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    """Read the binary layout back; the split tag is not serialized."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 14:
        raise FormatError("truncated header")
    version, count, image_size, num_classes = struct.unpack("<HIHH", blob[4:14])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    offset = 14
    rec = 2 + 4 + 8 + image_size * image_size * 4
    if len(blob) != offset + count * rec:
        raise FormatError(f"truncated file: expected {offset + count * rec} bytes, "
                          f"got {len(blob)}")
    samples = []
    for _ in range(count):
        class_id, orientation, noise_seed = struct.unpack("<HfQ", blob[offset:offset + 14])
        offset += 14
        img = np.frombuffer(blob, dtype="<f4", count=image_size * image_size,
                            offset=offset).reshape(image_size, image_size).copy()
        offset += image_size * image_size * 4
        samples.append(ShapeSample(image=img, class_id=class_id,
                                   orientation=float(orientation), noise_seed=noise_seed))
    return Dataset(samples=samples, split=split, seed=0, image_size=image_size,
                   num_classes=num_classes)


def dataset_io(dataset: Dataset | None, path, direction: str, split: str = "train"):
    """Single entry point for the binary round trip."""
    if direction == "save":
        save_dataset(dataset, path)
        return None
    if direction == "load":
        return load_dataset(path, split)
    raise ValueError(f"direction must be 'save' or 'load', got {direction!r}")
