"""Command-line interface: dataset synthesis, corruption, training,
ensembling, distillation, evaluation, and report rendering.

Global flags come before the verb::

    vonebench --seed 7 --out run/data synth-data --classes 4 --per-class 25
    vonebench --seed 7 --out run/corr corrupt --data run/data/val
    vonebench --seed 7 --out run/models train --data run/data --variant standard

Config files are JSON; recognized keys mirror the desk profile
(experiment.DESK_PROFILE) plus the verb arguments documented below.
Heavy numeric imports happen inside the verb handlers, after --threads
has capped the BLAS/OpenMP pools for this process.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

# Mirrors the published variant table; kept literal so parsing needs no
# numeric imports.  A test asserts it matches frontend.VARIANT_TABLE.
VARIANTS = ("standard", "low_sf", "mid_sf", "high_sf", "only_simple",
            "only_complex", "low_noise", "no_noise")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _apply_threads(n):
    for var in _THREAD_VARS:
        os.environ[var] = str(int(n))


def _load_config(path):
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return doc


def _profile(cfg):
    from .experiment import DESK_PROFILE
    p = dict(DESK_PROFILE)
    p.update({k: v for k, v in cfg.items() if k in p})
    return p


def _load_split_tree(root):
    """Dataset from a directory that either holds train/ and val/ class
    trees (split preserved) or class folders directly (80/20 split)."""
    import numpy as np

    from .data import Dataset, load_dataset
    root = Path(root)
    if (root / "train").is_dir() and (root / "val").is_dir():
        tr = load_dataset(root / "train")
        va = load_dataset(root / "val")
        if tr.class_names != va.class_names:
            raise ValueError(f"{root}: train/ and val/ class folders differ")
        n = len(tr.images)
        return Dataset(np.concatenate([tr.images, va.images]),
                       np.concatenate([tr.labels, va.labels]),
                       tr.n_classes, np.arange(n),
                       n + np.arange(len(va.images)), tr.class_names)
    return load_dataset(root)


def _build_frontend(args, p, name):
    """Fixed-weight block for train/distill: loaded from a snapshot or
    built from a variant row at the profile's desk width."""
    from .frontend import build_vone_block, load_frontend, variant_config
    from .experiment import desk_channels
    from .rng import derive_seed
    if args.frontend:
        return load_frontend(args.frontend)
    n_s, n_c = desk_channels(args.variant, p["total_channels"])
    cfg = variant_config(args.variant,
                         seed=derive_seed(args.seed, "frontend", args.variant),
                         n_simple=n_s, n_complex=n_c,
                         kernel_px=p["kernel_px"],
                         noise_scale=p["noise_scale"])
    return build_vone_block(cfg)


def _train_and_save(args, cfg, distill=None, default_name=None):
    """Shared body of the train and distill verbs."""
    import numpy as np

    from .backend_net import BackendConfig, save_backend
    from .experiment import desk_train_config
    from .frontend import fit_response_scale, save_frontend
    from .rng import derive_seed
    from .training import normalize_batch, train, write_training_log

    p = _profile(cfg)
    name = args.name or default_name
    ds = _load_split_tree(args.data)
    block = _build_frontend(args, p, name)
    fe = block
    if cfg.get("standardize", True):
        fit_x = normalize_batch(ds.train[0][:p["fit_images"]])
        fe = fit_response_scale(block, fit_x)
    bc = BackendConfig(in_channels=block.config.n_simple + block.config.n_complex,
                       n_classes=ds.n_classes, bottleneck=p["bottleneck"],
                       conv1=p["conv1"], conv2=p["conv2"],
                       seed=derive_seed(args.seed, "backend", name))
    tc = desk_train_config(p, args.seed, name, distill=distill)
    params, log = train(bc, fe, ds, tc)

    out = args.out
    save_frontend(block, out / f"{name}.vone")
    meta = {"name": name, "variant": block.config.variant_name,
            "seed": args.seed, "frontend": f"{name}.vone"}
    if cfg.get("standardize", True):
        meta["response_offset"] = [float(v) for v in fe.offset]
        meta["response_scale"] = [float(v) for v in fe.scale]
    save_backend(out / f"{name}.npz", params, bc, meta)
    write_training_log(out / f"{name}-train.csv", log)
    print(f"{name}: val_acc {log[-1]['val_acc']:.4f} -> {out / (name + '.npz')}")
    return 0


def _load_model(path, name=None):
    """Model from a checkpoint (.npz member) or descriptor (.json ensemble)."""
    from .ensemble import load_ensemble, load_member_checkpoint
    path = Path(path)
    if path.suffix == ".json":
        return name or path.stem, load_ensemble(path)
    member = load_member_checkpoint(path, name)
    return member.name, member


# --- verbs -------------------------------------------------------------------

def _cmd_synth_data(args, cfg):
    from .data import synth_dataset
    from .image_io import save_image
    ds = synth_dataset(args.classes, args.per_class, args.seed)
    for split, idx in (("train", ds.train_idx), ("val", ds.val_idx)):
        for i in idx:
            cls = ds.class_names[ds.labels[i]]
            dest = args.out / split / cls / f"{i:05d}.png"
            dest.parent.mkdir(parents=True, exist_ok=True)
            save_image(dest, ds.images[i])
    print(f"{args.classes} classes x {args.per_class} images -> {args.out} "
          f"(train {len(ds.train_idx)}, val {len(ds.val_idx)})")
    return 0


def _cmd_frontend(args, cfg):
    from .experiment import desk_channels
    from .frontend import build_vone_block, save_frontend, variant_config
    from .rng import derive_seed
    overrides = {k: cfg[k] for k in
                 ("n_simple", "n_complex", "kernel_px", "noise_scale", "ppd",
                  "stride") if k in cfg}
    if args.channels is not None:
        n_s, n_c = desk_channels(args.variant, args.channels)
        overrides.update(n_simple=n_s, n_complex=n_c)
    if args.kernel_px is not None:
        overrides["kernel_px"] = args.kernel_px
    block = build_vone_block(variant_config(
        args.variant, seed=derive_seed(args.seed, "frontend", args.variant),
        **overrides))
    name = args.name or args.variant
    dest = args.out / f"{name}.vone"
    save_frontend(block, dest)
    c = block.config
    print(f"{args.variant}: {c.n_simple} simple + {c.n_complex} complex, "
          f"kernel {c.kernel_px}px -> {dest}")
    return 0


def _cmd_corrupt(args, cfg):
    from .corruptions import CORRUPTION_KINDS, build_corrupted_set, list_dataset_images
    from .image_io import load_image, save_image
    from .rng import derive_seed
    kinds = args.kinds.split(",") if args.kinds else list(CORRUPTION_KINDS)
    severities = [int(s) for s in args.severities.split(",")]
    rows = build_corrupted_set(args.data, args.out, kinds,
                               [s for s in severities if s != 0], args.seed)
    if 0 in severities:
        # identity control: severity 0 copies the input unchanged
        for source_id, src in list_dataset_images(args.data):
            image = load_image(src)
            row_seed = derive_seed(args.seed, "image", source_id)
            for kind in kinds:
                rel = Path(kind) / "0" / f"{source_id}.png"
                (args.out / rel).parent.mkdir(parents=True, exist_ok=True)
                save_image(args.out / rel, image)
                rows.append({"source_id": source_id, "kind": kind,
                             "severity": 0, "seed": row_seed,
                             "path": rel.as_posix()})
        rows.sort(key=lambda r: (r["source_id"], r["kind"], r["severity"]))
        with open(args.out / "manifest.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["source_id", "kind", "severity", "seed", "path"])
            writer.writeheader()
            writer.writerows(rows)
    print(f"{len(rows)} corrupted images ({len(kinds)} kinds x "
          f"{len(severities)} severities) -> {args.out}")
    return 0


def _cmd_train(args, cfg):
    return _train_and_save(args, cfg, default_name=args.variant or
                           Path(args.frontend).stem)


def _cmd_distill(args, cfg):
    from .ensemble import load_ensemble, load_member_checkpoint
    from .training import DistillConfig
    teacher = Path(args.teacher)
    if teacher.suffix == ".json":
        dc = dict(teacher_params=load_ensemble(teacher))
    else:
        m = load_member_checkpoint(teacher)
        dc = dict(teacher_params=m.backend_params, teacher_frontend=m.frontend)
    for k in ("temperature", "soft_weight", "hard_weight", "teacher_noise_draws"):
        if k in cfg:
            dc[k] = cfg[k]
    default = (args.variant or Path(args.frontend).stem) + "_distilled"
    return _train_and_save(args, cfg, distill=DistillConfig(**dc),
                           default_name=default)


def _cmd_ensemble(args, cfg):
    from .backend_net import load_backend
    from .ensemble import load_ensemble, save_ensemble_descriptor
    entries = []
    for ck in args.members:
        ckp = Path(ck)
        _, _, meta = load_backend(ckp)
        front = meta.get("frontend")
        entries.append({
            "name": meta.get("name", ckp.stem),
            "backend": os.path.relpath(ckp, args.out),
            "frontend": None if front is None
            else os.path.relpath(ckp.parent / front, args.out),
        })
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
    dest = args.out / f"{args.name}.json"
    save_ensemble_descriptor(dest, entries, weights)
    ens = load_ensemble(dest)   # surfaces member mismatches at build time
    print(f"{len(ens.members)} members -> {dest}")
    return 0


def _cmd_eval(args, cfg):
    from .data import load_dataset
    from .evaluation import evaluate_accuracy, evaluate_corrupted
    from .rng import RngStream, derive_seed
    name, model = _load_model(args.model, args.name)
    ds = load_dataset(args.data)
    root = RngStream(derive_seed(args.seed, "eval", name))
    doc = {"model": name, "seed": args.seed, "n_images": len(ds.images),
           "clean": evaluate_accuracy(model, ds.images, ds.labels,
                                      root.substream("clean"))}
    if args.corrupted:
        cells = evaluate_corrupted(model, args.corrupted, ds.class_names,
                                   root.substream("cells"))
        doc["cells"] = [[k, s, v] for (k, s), v in sorted(cells.items())]
    dest = args.out / f"eval-{name}.json"
    dest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    cells_note = f", {len(doc['cells'])} cells" if "cells" in doc else ""
    print(f"{name}: clean {doc['clean']:.4f}{cells_note} -> {dest}")
    return 0


def _cmd_report(args, cfg):
    from .corruptions import CORRUPTION_KINDS
    from .evaluation import SEVERITIES, category_report, relative_report
    from .reporting import emit_report
    full = {(k, s) for k in CORRUPTION_KINDS for s in SEVERITIES}
    reports = []
    for f in args.evals:
        doc = json.loads(Path(f).read_text())
        if not doc.get("cells"):
            raise ValueError(f"{f}: no corruption cells to report")
        cells = {(k, int(s)): float(v) for k, s, v in doc["cells"]}
        reports.append(category_report(doc["model"], doc["clean"], cells,
                                       subset_ok=set(cells) != full,
                                       aggregation=args.aggregation))
    if args.base is not None:
        bases = [r for r in reports if r.model_id == args.base]
        if not bases:
            raise ValueError(f"base model {args.base!r} not among reports")
        reports.extend(relative_report(r, bases[0]) for r in reports
                       if r.model_id != args.base)
    files = emit_report(reports, args.out,
                        metadata={"seed": args.seed,
                                  "sources": sorted(Path(f).name for f in args.evals)})
    print("\n".join(str(files[k]) for k in sorted(files)))
    return 0


# --- argument parsing ----------------------------------------------------------

def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="vonebench",
        description="V1 front-end variants, corruption benchmark, and "
                    "ensemble/distillation tooling")
    ap.add_argument("--seed", type=int, default=0,
                    help="root seed; every stream derives from it")
    ap.add_argument("--config", type=Path, default=None,
                    help="JSON file overriding desk-profile defaults")
    ap.add_argument("--out", type=Path, default=Path("."),
                    help="output directory (created if missing)")
    ap.add_argument("--threads", type=int, default=1,
                    help="cap for BLAS/OpenMP thread pools")
    sub = ap.add_subparsers(dest="verb", required=True)

    fr = sub.add_parser("frontend", help="build and serialize a front-end")
    fr.add_argument("--variant", required=True, choices=VARIANTS)
    fr.add_argument("--channels", type=int, default=None,
                    help="total channels, split per the variant's cell ratio")
    fr.add_argument("--kernel-px", type=int, default=None)
    fr.add_argument("--name", default=None)

    sd = sub.add_parser("synth-data", help="write a procedural dataset")
    sd.add_argument("--classes", type=int, default=10)
    sd.add_argument("--per-class", type=int, default=100)

    co = sub.add_parser("corrupt", help="corrupt a class-folder image tree")
    co.add_argument("--data", type=Path, required=True)
    co.add_argument("--kinds", default=None, help="comma list (default: all 15)")
    co.add_argument("--severities", default="1,2,3,4,5",
                    help="comma list; 0 writes identity copies")

    def model_io(p, teacher=False):
        p.add_argument("--data", type=Path, required=True,
                       help="dataset root (train/+val/ trees or class folders)")
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--variant", choices=VARIANTS)
        group.add_argument("--frontend", type=Path,
                           help="serialized front-end snapshot")
        if teacher:
            p.add_argument("--teacher", type=Path, required=True,
                           help="ensemble descriptor or member checkpoint")
        p.add_argument("--name", default=None)

    model_io(sub.add_parser("train", help="train one model"))
    model_io(sub.add_parser("distill", help="train a student against a teacher"),
             teacher=True)

    en = sub.add_parser("ensemble", help="write an ensemble descriptor")
    en.add_argument("members", nargs="+", help="member checkpoint paths")
    en.add_argument("--weights", default=None, help="comma list, must sum to 1")
    en.add_argument("--name", default="ensemble")

    ev = sub.add_parser("eval", help="score a model or ensemble")
    ev.add_argument("--model", type=Path, required=True,
                    help="member checkpoint (.npz) or ensemble descriptor (.json)")
    ev.add_argument("--data", type=Path, required=True,
                    help="clean evaluation images (class folders)")
    ev.add_argument("--corrupted", type=Path, default=None,
                    help="corrupted set root (manifest or kind/severity tree)")
    ev.add_argument("--name", default=None, help="model id override")

    rp = sub.add_parser("report", help="render CSV + SVG from eval outputs")
    rp.add_argument("evals", nargs="+", help="eval JSON files")
    rp.add_argument("--base", default=None,
                    help="model id to normalize relative accuracy against")
    rp.add_argument("--aggregation", choices=("kind", "category"),
                    default="kind")

    return ap.parse_args(argv)


_DISPATCH = {
    "frontend": _cmd_frontend,
    "synth-data": _cmd_synth_data,
    "corrupt": _cmd_corrupt,
    "train": _cmd_train,
    "distill": _cmd_distill,
    "ensemble": _cmd_ensemble,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def main(argv=None):
    args = _parse_args(sys.argv[1:] if argv is None else argv)
    _apply_threads(args.threads)
    try:
        cfg = _load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return _DISPATCH[args.verb](args, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
