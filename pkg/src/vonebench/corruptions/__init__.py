"""Common-corruption benchmark generator.

Fifteen corruption kinds at five severities for 64x64 RGB images, grouped
into four categories (noise, blur, weather, digital).  Severity parameter
ladders live in ``severity_params.json`` so they stay auditable and
swappable.  Everything is deterministic given a seed.
"""

import csv
import dataclasses
import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..image_io import load_image, save_image
from ..rng import RngStream, derive_seed
from . import _kinds

CORRUPTION_KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise",
    "defocus_blur", "glass_blur", "motion_blur", "zoom_blur",
    "snow", "frost", "fog", "brightness",
    "contrast", "elastic_transform", "pixelate", "jpeg_compression",
)

CATEGORY_MAP = {
    "gaussian_noise": "noise", "shot_noise": "noise", "impulse_noise": "noise",
    "defocus_blur": "blur", "glass_blur": "blur", "motion_blur": "blur",
    "zoom_blur": "blur",
    "snow": "weather", "frost": "weather", "fog": "weather",
    "brightness": "weather",
    "contrast": "digital", "elastic_transform": "digital",
    "pixelate": "digital", "jpeg_compression": "digital",
}

CATEGORIES = ("noise", "blur", "weather", "digital")

IMAGE_EXTENSIONS = (".png", ".ppm")

_DISPATCH = {
    "gaussian_noise": _kinds.gaussian_noise,
    "shot_noise": _kinds.shot_noise,
    "impulse_noise": _kinds.impulse_noise,
    "defocus_blur": _kinds.defocus_blur,
    "glass_blur": _kinds.glass_blur,
    "motion_blur": _kinds.motion_blur,
    "zoom_blur": _kinds.zoom_blur,
    "snow": _kinds.snow,
    "frost": _kinds.frost,
    "fog": _kinds.fog,
    "brightness": _kinds.brightness,
    "contrast": _kinds.contrast,
    "elastic_transform": _kinds.elastic_transform,
    "pixelate": _kinds.pixelate,
    "jpeg_compression": _kinds.jpeg_compression,
}

_PARAMS_CACHE = None


@dataclasses.dataclass(frozen=True)
class CorruptionSpec:
    """One corruption to apply: a kind, a severity in 1..5, and a seed."""

    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not isinstance(self.severity, (int, np.integer)):
            raise TypeError("severity must be an integer")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in [1, 5], got {self.severity}")


def severity_params():
    """The full parameter table, loaded once from the packaged JSON."""
    global _PARAMS_CACHE
    if _PARAMS_CACHE is None:
        text = (resources.files(__package__) / "severity_params.json").read_text()
        _PARAMS_CACHE = json.loads(text)
    return _PARAMS_CACHE


def kind_params(kind, severity):
    """Scalar parameters for one kind at one severity (1-indexed)."""
    ladders = severity_params()["kinds"][kind]
    return {name: ladder[severity - 1] for name, ladder in ladders.items()}


def apply_corruption(image, spec):
    """Corrupt one [3, H, W] image in [0, 1]; returns the same shape.

    Deterministic given (image, spec).  Randomness comes from a stream
    keyed by (seed, kind, severity), so each manifest row reproduces
    independently.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {image.shape}")
    if image.shape[1] != image.shape[2]:
        raise ValueError("image must be square")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    if isinstance(spec, dict):
        spec = CorruptionSpec(**spec)
    elif not isinstance(spec, CorruptionSpec):
        raise TypeError(f"spec must be a CorruptionSpec, got {type(spec)!r}")
    params = kind_params(spec.kind, spec.severity)
    stream = RngStream(spec.seed).substream("corrupt", spec.kind, spec.severity)
    hwc = np.ascontiguousarray(image.transpose(1, 2, 0))
    out = _DISPATCH[spec.kind](hwc, params, stream)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def list_dataset_images(dataset_path):
    """(source_id, path) pairs for a class-folder dataset, sorted by id.

    source_id is '<class_dir>/<file_stem>'.  Image files directly in the
    root are listed under their stem alone.
    """
    root = Path(dataset_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    pairs = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
            rel = p.relative_to(root)
            source_id = rel.with_suffix("").as_posix()
            pairs.append((source_id, p))
    return pairs


def build_corrupted_set(dataset_path, output_path, kinds, severities, seed):
    """Corrupt every dataset image by every (kind, severity) pair.

    Writes PNGs under ``output_path/<kind>/<severity>/<source_id>.png``
    plus a ``manifest.csv`` with header source_id,kind,severity,seed,path,
    rows in (source_id, kind, severity) order.  Per-row seeds derive from
    (seed, source_id), so any row can be regenerated on its own.  Returns
    the manifest rows.
    """
    kinds = list(kinds)
    for kind in kinds:
        if kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {kind!r}")
    severities = [int(s) for s in severities]
    out_root = Path(output_path)
    out_root.mkdir(parents=True, exist_ok=True)

    rows = []
    for source_id, src in list_dataset_images(dataset_path):
        if not kinds or not severities:
            continue
        try:
            image = load_image(src)
        except Exception as exc:
            raise IOError(f"failed to read {src}: {exc}") from exc
        row_seed = derive_seed(seed, "image", source_id)
        for kind in kinds:
            for severity in severities:
                spec = CorruptionSpec(kind, severity, row_seed)
                corrupted = apply_corruption(image, spec)
                rel = Path(kind) / str(severity) / f"{source_id}.png"
                dest = out_root / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                try:
                    save_image(dest, corrupted)
                except Exception as exc:
                    raise IOError(f"failed to write {dest}: {exc}") from exc
                rows.append({
                    "source_id": source_id,
                    "kind": kind,
                    "severity": severity,
                    "seed": row_seed,
                    "path": rel.as_posix(),
                })

    rows.sort(key=lambda r: (r["source_id"], r["kind"], r["severity"]))
    manifest_path = out_root / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["source_id", "kind", "severity", "seed", "path"])
        writer.writeheader()
        writer.writerows(rows)
    return rows
