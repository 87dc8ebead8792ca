"""Datasets: a procedural synthetic corpus and class-folder ingestion.

Synthetic classes pair a texture frequency with a texture orientation
group, plus a distinct shape as a secondary cue.  The label is carried
by local texture statistics, so a small net whose receptive field never
spans the whole image can still separate the classes, and models whose
filters cover only part of the frequency axis still see enough contrast
between bands.  Pose, color, and background vary per image; a linear
pixel classifier cannot memorize templates because the texture phase is
random.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_io import load_image
from .rng import RngStream

IMAGE_HW = 64
TRAIN_FRACTION = 0.8

_YY, _XX = np.mgrid[0:IMAGE_HW, 0:IMAGE_HW].astype(np.float64)


@dataclass
class Dataset:
    """Images [N, 3, 64, 64] in [0, 1] (float32 storage), labels [N],
    and a stratified train/val index split."""
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    class_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        n = len(self.images)
        if self.images.ndim != 4 or self.images.shape[1:] != (3, IMAGE_HW, IMAGE_HW):
            raise ValueError(
                f"expected [N, 3, {IMAGE_HW}, {IMAGE_HW}] images, got {self.images.shape}")
        if len(self.labels) != n:
            raise ValueError("images/labels length mismatch")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")

    @property
    def train(self):
        return self.images[self.train_idx], self.labels[self.train_idx]

    @property
    def val(self):
        return self.images[self.val_idx], self.labels[self.val_idx]


def _stratified_split(labels, n_classes):
    """First 80% of each class (in construction order) trains, the rest
    validates; both splits stay class-balanced."""
    train, val = [], []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        cut = int(round(len(idx) * TRAIN_FRACTION))
        train.extend(idx[:cut])
        val.extend(idx[cut:])
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(val), dtype=np.int64)


# --- synthetic corpus -------------------------------------------------------

def _tri(rx, ry, s):
    return (ry <= 0.6 * s) & (ry >= -0.6 * s + 1.714 * np.abs(rx))


_SHAPES = (
    ("disk", lambda rx, ry, s: rx * rx + ry * ry < (0.9 * s) ** 2),
    ("ring", lambda rx, ry, s: ((0.55 * s) ** 2 < rx * rx + ry * ry)
                               & (rx * rx + ry * ry < s * s)),
    ("square", lambda rx, ry, s: np.maximum(np.abs(rx), np.abs(ry)) < 0.8 * s),
    ("diamond", lambda rx, ry, s: np.abs(rx) + np.abs(ry) < 1.1 * s),
    ("cross", lambda rx, ry, s: ((np.abs(rx) < 0.28 * s) & (np.abs(ry) < s))
                                | ((np.abs(ry) < 0.28 * s) & (np.abs(rx) < s))),
    ("xcross", lambda rx, ry, s: ((np.abs(rx - ry) < 0.4 * s) & (np.abs(rx + ry) < 1.4 * s))
                                 | ((np.abs(rx + ry) < 0.4 * s) & (np.abs(rx - ry) < 1.4 * s))),
    ("hbar", lambda rx, ry, s: (np.abs(ry) < 0.3 * s) & (np.abs(rx) < 1.1 * s)),
    ("vbar", lambda rx, ry, s: (np.abs(rx) < 0.3 * s) & (np.abs(ry) < 1.1 * s)),
    ("triangle", _tri),
    ("crescent", lambda rx, ry, s: (rx * rx + ry * ry < s * s)
                                   & ((rx - 0.45 * s) ** 2 + ry * ry > (0.75 * s) ** 2)),
)

# texture frequencies in cycles/px; at 32 px/deg this spans ~1.6-8.5 cpd,
# inside the filter coverage of every front-end variant
_FREQ_RANGE = (0.05, 0.266)

# orientation groups in degrees; 45 stands for {45, 135} (drawn per sample)
# so each group maps onto itself under horizontal flips
_ORIENT_GROUPS = (0.0, 45.0, 90.0)


def class_recipes(n_classes):
    """(shape name, mask fn, texture frequency, orientation group) per class.

    The (frequency, orientation) pair is unique per class; the groups are
    45 degrees apart and the frequencies ~0.8 octave apart, so the pair
    survives the train-time rotation/scale jitter.  The shape is a
    secondary cue, distinct per class while n_classes stays within the
    shape list.
    """
    n_freqs = -(-n_classes // len(_ORIENT_GROUPS))
    freqs = np.geomspace(_FREQ_RANGE[0], _FREQ_RANGE[1], max(n_freqs, 2))
    return [(_SHAPES[i % len(_SHAPES)][0], _SHAPES[i % len(_SHAPES)][1],
             float(freqs[i // len(_ORIENT_GROUPS)]),
             _ORIENT_GROUPS[i % len(_ORIENT_GROUPS)])
            for i in range(n_classes)]


def _render_sample(recipe, stream):
    _, mask_fn, freq, orient = recipe
    u = stream.uniform(14)
    cx = 32.0 + (u[0] * 2 - 1) * 6.0
    cy = 32.0 + (u[1] * 2 - 1) * 6.0
    size = 16.0 * (0.8 + 0.4 * u[2])
    rot = (u[3] * 2 - 1) * np.pi / 9          # +/-20 deg keeps bars distinct
    gang = np.deg2rad(orient + (u[4] * 2 - 1) * 8.0)
    if orient == 45.0 and u[5] < 0.5:         # diagonal group straddles flips
        gang += np.pi / 2
    gphase = u[6] * 2 * np.pi
    bg = 0.05 + 0.20 * u[7:10]
    fg = 0.60 + 0.35 * u[10:13]
    dx, dy = _XX - cx, _YY - cy
    c, s = np.cos(rot), np.sin(rot)
    rx, ry = dx * c + dy * s, -dx * s + dy * c
    mask = mask_fn(rx, ry, size)
    t = _XX * np.cos(gang) + _YY * np.sin(gang)
    tex = 0.55 + 0.45 * (0.5 + 0.5 * np.sin(2 * np.pi * freq * t + gphase))
    grain = (stream.uniform(IMAGE_HW * IMAGE_HW).reshape(IMAGE_HW, IMAGE_HW) - 0.5) * 0.06
    img = np.empty((3, IMAGE_HW, IMAGE_HW))
    for ch in range(3):
        plane = np.full((IMAGE_HW, IMAGE_HW), bg[ch]) + grain
        plane[mask] = (fg[ch] * tex + grain)[mask]
        img[ch] = plane
    return np.clip(img, 0.0, 1.0)


def synth_dataset(n_classes, n_per_class, seed):
    """Balanced procedural dataset with an 80/20 stratified split.

    Every sample draws from its own (class, index) substream, so the
    corpus is reproducible element-wise regardless of generation order.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1:
        raise ValueError("need at least 1 image per class")
    recipes = class_recipes(n_classes)
    root = RngStream(seed).substream("synth")
    images = np.empty((n_classes * n_per_class, 3, IMAGE_HW, IMAGE_HW), dtype=np.float32)
    labels = np.empty(n_classes * n_per_class, dtype=np.int64)
    pos = 0
    for ci in range(n_classes):
        for si in range(n_per_class):
            images[pos] = _render_sample(recipes[ci], root.substream(ci, si))
            labels[pos] = ci
            pos += 1
    train_idx, val_idx = _stratified_split(labels, n_classes)
    names = tuple(f"{i:03d}_{recipes[i][0]}" for i in range(n_classes))
    return Dataset(images, labels, n_classes, train_idx, val_idx, names)


# --- ingestion --------------------------------------------------------------

def _ingest(entries):
    """entries: (path, class name) pairs; returns a Dataset, collecting
    every unreadable or mis-sized file into one itemized error."""
    names = sorted({c for _, c in entries})
    index = {c: i for i, c in enumerate(names)}
    images = np.empty((len(entries), 3, IMAGE_HW, IMAGE_HW), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    problems = []
    for i, (path, cname) in enumerate(entries):
        try:
            img = load_image(path)
        except Exception as exc:
            problems.append(f"{path}: {exc}")
            continue
        if img.shape != (3, IMAGE_HW, IMAGE_HW):
            problems.append(f"{path}: expected 3x{IMAGE_HW}x{IMAGE_HW}, got "
                            f"{img.shape[0]}x{img.shape[1]}x{img.shape[2]}")
            continue
        images[i] = img
        labels[i] = index[cname]
    if problems:
        raise ValueError("dataset ingestion failed:\n  " + "\n  ".join(problems))
    train_idx, val_idx = _stratified_split(labels, len(names))
    return Dataset(images, labels, len(names), train_idx, val_idx, tuple(names))


def load_dataset(root_path):
    """Read a class-folder tree (one subdirectory per class) or a manifest
    CSV with `path,label` columns (paths relative to the manifest).

    Ordering is lexicographic and labels come from the sorted class names,
    so re-loading yields an identical Dataset.
    """
    root = Path(root_path)
    if root.is_file() and root.suffix == ".csv":
        with open(root, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
                raise ValueError(f"{root}: manifest needs `path` and `label` columns")
            rows = sorted((r["path"], r["label"]) for r in reader)
        if not rows:
            raise ValueError(f"{root}: manifest lists no images")
        entries = [(root.parent / p, c) for p, c in rows]
        return _ingest(entries)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: no such dataset directory")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    entries = []
    for cdir in classes:
        for f in sorted(cdir.rglob("*")):
            if f.is_file() and f.suffix in (".png", ".ppm"):
                entries.append((f, cdir.name))
    if not entries:
        raise ValueError(f"{root}: no class folders with .png/.ppm images found")
    return _ingest(entries)
