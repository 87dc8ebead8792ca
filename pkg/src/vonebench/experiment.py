"""Desk-scale trend run: train all eight front-end variants, ensemble
them, distill students from the ensemble, and score everything on the
corruption benchmark.

This is a scaled-down counterpart of the full pipeline.  Channel counts,
dataset size, epochs, and the evaluation subset are sized for a single
workstation, while the structural choices stay intact: the variant table
(spatial-frequency bands, cell types, noise modes), the simple/complex
channel ratios, the distillation loss weights, and the kind-mean
aggregation of corruption accuracy.
"""

from __future__ import annotations

import time

import numpy as np

from .backend_net import BackendConfig
from .corruptions import CORRUPTION_KINDS, CorruptionSpec, apply_corruption
from .data import synth_dataset
from .ensemble import EnsembleMember, average_logits, make_ensemble, member_logits
from .evaluation import SEVERITIES, category_report
from .frontend import VARIANT_TABLE, build_vone_block, fit_response_scale, variant_config
from .rng import RngStream, derive_seed
from .training import AugmentPolicy, DistillConfig, TrainConfig, normalize_batch, train

VARIANT_ORDER = tuple(VARIANT_TABLE)
ENSEMBLE_ID = "variants_ensemble"
DISTILLED = ("no_noise", "standard")   # students, in training order


def desk_channels(variant, total):
    """Simple/complex channel split at a reduced total width, preserving
    each variant's published ratio (half/half, all-simple, or all-complex)."""
    if total < 2 or total % 2:
        raise ValueError("total channel count must be even and >= 2")
    if variant == "only_simple":
        return total, 0
    if variant == "only_complex":
        return 0, total
    return total // 2, total // 2


# Workstation-scale defaults.  Every override against the full-scale
# recipe (width, epochs, lr, augmentation strength, gamma) is recorded in
# emitted report metadata via the profile echo.
DESK_PROFILE = {
    "n_classes": 10,
    "n_per_class": 500,
    "dataset_seed": 42,        # corpus fixed across model seeds
    "total_channels": 12,
    "kernel_px": 13,
    "noise_scale": 4.0,        # gamma: activation -> expected event count
    "fit_images": 200,         # front-end response standardization set
    "bottleneck": 12,
    "conv1": 16,
    "conv2": 24,
    "lr0": 0.05,
    "batch_size": 128,
    "epochs": 10,
    "plateau_patience": 2,
    "distill_lr0": 0.002,      # soft loss carries soft_weight/T = 20x gradients
    "scale_range": (1.0, 1.1),
    "rotation_range": (-10.0, 10.0),
    "n_eval": 100,             # balanced val subset scored per corruption cell
}


def _policy(p):
    return AugmentPolicy(scale_range=tuple(p["scale_range"]),
                         rotation_range=tuple(p["rotation_range"]))


def desk_frontend(variant, run_seed, p, fit_x):
    """Standardized front-end for one variant at desk width.

    The filter bank seed derives from (run_seed, variant), so re-running
    with the same seed rebuilds identical kernels.
    """
    n_s, n_c = desk_channels(variant, p["total_channels"])
    cfg = variant_config(variant, seed=derive_seed(run_seed, "frontend", variant),
                         n_simple=n_s, n_complex=n_c,
                         kernel_px=p["kernel_px"], noise_scale=p["noise_scale"])
    return fit_response_scale(build_vone_block(cfg), fit_x)


def desk_backend_config(p, run_seed, variant):
    return BackendConfig(in_channels=p["total_channels"], n_classes=p["n_classes"],
                         bottleneck=p["bottleneck"], conv1=p["conv1"],
                         conv2=p["conv2"], seed=derive_seed(run_seed, "backend", variant))


def desk_train_config(p, run_seed, variant, distill=None):
    return TrainConfig(lr0=p["distill_lr0"] if distill else p["lr0"],
                       batch_size=p["batch_size"], epochs=p["epochs"],
                       plateau_patience=p["plateau_patience"],
                       distill=distill, augment=_policy(p),
                       seed=derive_seed(run_seed, "train", variant))


def balanced_indices(labels, per_class, n_classes):
    """First per_class indices of each class, concatenated in class order."""
    picks = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if len(pool) < per_class:
            raise ValueError(f"class {c} has only {len(pool)} samples, need {per_class}")
        picks.append(pool[:per_class])
    return np.concatenate(picks)


def _score_models(members, groups, images, labels, noise_root):
    """Accuracy per model over one image set.

    members: list of (model_id, EnsembleMember); each stochastic member
    draws from noise_root keyed exactly as ensemble prediction would, so
    a group average over the same logits reproduces the ensemble output.
    groups: list of (model_id, tuple of member model_ids) averaged with
    uniform weights.
    """
    x = normalize_batch(images)
    logits = {mid: member_logits(m, x, noise_root, 0) for mid, m in members}
    for gid, mids in groups:
        logits[gid] = average_logits([logits[mid] for mid in mids])
    y = np.asarray(labels)
    return {mid: float(np.mean(np.argmax(lg, axis=1) == y)) for mid, lg in logits.items()}


def _corrupt_cell(images, kind, severity, seeds):
    out = np.empty_like(images, dtype=np.float64)
    for i, img in enumerate(images):
        spec = CorruptionSpec(kind, severity, int(seeds[i]))
        out[i] = apply_corruption(img, spec)
    return out


def run_trend_experiment(seed, profile=None, progress=None):
    """Train, ensemble, distill, and evaluate at desk scale for one seed.

    Returns a dict with per-model EvalReports ("reports"), raw clean
    accuracy and corruption cells, training logs, the resolved profile,
    and wall-clock minutes.  `profile` entries override DESK_PROFILE;
    `progress` is an optional callable taking one status string.
    """
    p = dict(DESK_PROFILE)
    p.update(profile or {})
    say = progress or (lambda msg: None)
    t0 = time.time()

    ds = synth_dataset(p["n_classes"], p["n_per_class"], p["dataset_seed"])
    fit_x = normalize_batch(ds.train[0][:p["fit_images"]])

    members = []
    logs = {}
    for variant in VARIANT_ORDER:
        t1 = time.time()
        fe = desk_frontend(variant, seed, p, fit_x)
        params, log = train(desk_backend_config(p, seed, variant), fe, ds,
                            desk_train_config(p, seed, variant))
        members.append(EnsembleMember(variant, params, fe))
        logs[variant] = log
        say(f"{variant}: val {log[-1]['val_acc']:.3f} "
            f"({time.time() - t1:.0f}s)")

    ens = make_ensemble(members)

    students = []
    for variant in DISTILLED:
        t1 = time.time()
        sid = variant + "_distilled"
        fe = desk_frontend(variant, seed, p, fit_x)
        dcfg = DistillConfig(teacher_params=ens)
        params, log = train(desk_backend_config(p, seed, variant), fe, ds,
                            desk_train_config(p, seed, variant, distill=dcfg))
        students.append(EnsembleMember(sid, params, fe))
        logs[sid] = log
        say(f"{sid}: val {log[-1]['val_acc']:.3f} ({time.time() - t1:.0f}s)")

    scored = [(m.name, m) for m in ens.members] + [(s.name, s) for s in students]
    groups = [(ENSEMBLE_ID, tuple(m.name for m in ens.members))]
    model_ids = [mid for mid, _ in scored] + [ENSEMBLE_ID]

    val_x, val_y = ds.val
    pick = balanced_indices(val_y, p["n_eval"] // p["n_classes"], p["n_classes"])
    eval_x, eval_y = val_x[pick], val_y[pick]
    img_seeds = [derive_seed(p["dataset_seed"], "bench", i) for i in range(len(pick))]

    root = RngStream(derive_seed(seed, "trend-eval"))
    clean = _score_models(scored, groups, eval_x, eval_y,
                          root.substream("eval", "clean"))
    cells = {mid: {} for mid in model_ids}
    for kind in CORRUPTION_KINDS:
        for sev in SEVERITIES:
            xc = _corrupt_cell(eval_x, kind, sev, img_seeds)
            acc = _score_models(scored, groups, xc, eval_y,
                                root.substream("eval", kind, sev))
            for mid in model_ids:
                cells[mid][(kind, sev)] = acc[mid]
        say(f"eval {kind}: done")

    reports = {mid: category_report(mid, clean[mid], cells[mid]) for mid in model_ids}
    minutes = (time.time() - t0) / 60.0
    say(f"total {minutes:.1f} min")
    return {"seed": seed, "profile": p, "reports": reports, "clean": clean,
            "cells": cells, "train_logs": logs, "minutes": minutes}
