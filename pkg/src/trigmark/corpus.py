"""Synthetic image-caption corpus and basic trigger sampling.

Each image is a single coloured shape on a plain grey background with a
jittered position; its caption is ``"<color> <shape> <size>"``. Pixel values
are generated on the 8-bit grid so corpora survive a PPM round trip exactly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import ImageSample, TextSample, Vocabulary
from .storage import read_ppm, write_ppm

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
}
SIZE_RADIUS = {"small": 4, "large": 8}

PRIMARY_ATTRIBUTES = (("red", "green", "blue"), ("circle", "square", "triangle"), ("small", "large"))
# disjoint vocabulary for the "different source dataset" forgery
ALTERNATE_ATTRIBUTES = (("yellow", "cyan", "magenta"), ("cross", "diamond", "ring"), ("small", "large"))


def _shape_mask(shape, radius, n):
    """Boolean ``n x n`` stencil of a shape centred in the box."""
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    dy, dx = yy - c, xx - c
    if shape == "circle":
        return dx**2 + dy**2 <= radius**2 + 0.5
    if shape == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if shape == "triangle":
        # apex up, base on the bottom row of the box
        rows = (dy + radius) / (2 * radius)
        return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= rows * radius)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    if shape == "cross":
        arm = max(1, radius // 3)
        inside = (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
        return inside & ((np.abs(dx) <= arm) | (np.abs(dy) <= arm))
    if shape == "ring":
        r2 = dx**2 + dy**2
        return (r2 <= radius**2 + 0.5) & (r2 >= (radius / 2.0) ** 2)
    raise ValueError(f"unknown shape {shape!r}")


@dataclass
class SyntheticCorpusSpec:
    image_size: tuple = (32, 32)
    colors: tuple = PRIMARY_ATTRIBUTES[0]
    shapes: tuple = PRIMARY_ATTRIBUTES[1]
    sizes: tuple = PRIMARY_ATTRIBUTES[2]
    samples_per_class: int = 30
    seed: int = 7
    jitter: int = 1
    name: str = "shapes"

    def validate(self):
        for axis in ("colors", "shapes", "sizes"):
            values = getattr(self, axis)
            if len(set(values)) < 2:
                raise ValueError(f"corpus spec needs at least 2 distinct {axis}")
        unknown = [c for c in self.colors if c not in COLORS] + [s for s in self.sizes if s not in SIZE_RADIUS]
        if unknown:
            raise ValueError(f"unknown attribute values: {unknown}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        h, w = self.image_size
        largest = max(SIZE_RADIUS[s] for s in self.sizes)
        if min(h, w) < 2 * largest + 3:
            raise ValueError(f"image {h}x{w} too small for shape radius {largest}")

    @property
    def n_pairs(self):
        return len(self.colors) * len(self.shapes) * len(self.sizes) * self.samples_per_class


def default_vocabulary():
    """Word list shared by every toy encoder: both attribute vocabularies."""
    words = []
    for axis in PRIMARY_ATTRIBUTES + ALTERNATE_ATTRIBUTES:
        words.extend(w for w in axis if w not in words)
    return Vocabulary(words)


def render_image(spec, color, shape, size, rng):
    h, w = spec.image_size
    radius = SIZE_RADIUS[size]
    n = 2 * radius + 1
    background = rng.integers(15, 65) / 255.0
    j = spec.jitter
    top = min(max(0, (h - n) // 2 + int(rng.integers(-j, j + 1))), h - n)
    left = min(max(0, (w - n) // 2 + int(rng.integers(-j, j + 1))), w - n)
    img = np.full((h, w, 3), background)
    stencil = _shape_mask(shape, radius, n)
    patch = img[top:top + n, left:left + n]
    patch[stencil] = COLORS[color]
    return np.rint(img * 255.0) / 255.0, (top, left)


def generate_synthetic_corpus(spec=None, vocabulary=None):
    """Render every (color, shape, size) class ``samples_per_class`` times.

    Returns a list of ``(ImageSample, TextSample)``; text ids are caption
    class ids (shared by pairs with the same caption), image ids are unique.
    """
    spec = spec or SyntheticCorpusSpec()
    spec.validate()
    vocabulary = vocabulary or default_vocabulary()
    pairs = []
    for color, shape, size in itertools.product(spec.colors, spec.shapes, spec.sizes):
        caption = f"{color} {shape} {size}"
        text = vocabulary.text(caption)
        for j in range(spec.samples_per_class):
            # per-sample stream: parallel-safe and order independent
            rng = np.random.default_rng([spec.seed, spec.colors.index(color), spec.shapes.index(shape), spec.sizes.index(size), j])
            pixels, _ = render_image(spec, color, shape, size, rng)
            pairs.append((ImageSample(pixels, f"{spec.name}-{text.id}-{j:03d}"), text))
    return pairs


def pair_labels(text):
    color, shape, size = text.raw.split()
    return {"color": color, "shape": shape, "size": size}


def save_corpus(corpus, directory, spec=None):
    """Write images as PPM plus ``manifest.jsonl`` (one JSON record per pair)."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for img, text in corpus:
        rel = f"images/{img.id}.ppm"
        write_ppm(directory / rel, img.pixels)
        record = {"id": img.id, "caption": text.raw, "text_id": text.id, "image": rel, "labels": pair_labels(text)}
        lines.append(json.dumps(record, sort_keys=True))
    (directory / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if spec is not None:
        info = {k: list(v) if isinstance(v, tuple) else v for k, v in vars(spec).items()}
        (directory / "spec.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_corpus(directory, vocabulary=None):
    directory = Path(directory)
    manifest = directory / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"corpus manifest not found: {manifest}")
    vocabulary = vocabulary or default_vocabulary()
    pairs = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        img = ImageSample(read_ppm(directory / rec["image"]), rec["id"])
        pairs.append((img, vocabulary.text(rec["caption"], rec["text_id"])))
    return pairs


@dataclass
class BasicTriggerSet:
    pairs: list
    source_dataset: str
    sampling_seed: int
    k: int = field(init=False)

    def __post_init__(self):
        self.k = len(self.pairs)
        ids = [img.id for img, _ in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("basic trigger set contains duplicate pairs")


def sample_basic_triggers(corpus, k, seed, source_dataset="shapes"):
    """Draw ``k`` distinct pairs uniformly without replacement."""
    if not 1 <= k <= len(corpus):
        raise ValueError(f"k={k} must be between 1 and the corpus size {len(corpus)}")
    idx = np.random.default_rng(seed).choice(len(corpus), size=k, replace=False)
    return BasicTriggerSet([corpus[i] for i in idx], source_dataset, seed)


def feature_dims(pair):
    """Modality feature sizes of one pair: pixel values and token count."""
    img, text = pair
    return int(np.prod(img.shape)), len(text.tokens)


def trigger_space_dimension(dataset_size, k, dims):
    """``C(|D|, k) * prod_i(n_img_i * n_text_i)`` as an exact integer."""
    if k < 0 or k > dataset_size:
        raise ValueError(f"k={k} outside [0, {dataset_size}]")
    if len(dims) != k:
        raise ValueError(f"expected {k} per-sample dims, got {len(dims)}")
    total = math.comb(dataset_size, k)
    for n_img, n_text in dims:
        if n_img <= 0 or n_text <= 0:
            raise ValueError("feature dimensions must be positive")
        total *= n_img * n_text
    return total
