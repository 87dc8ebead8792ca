"""Top-1 accuracy evaluation and corruption-report aggregation.

Evaluation preprocessing is normalization only; stochastic front-ends
draw per-image noise from a seeded stream keyed by absolute image index,
so accuracy never depends on batch chunking.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend_net import backend_forward
from .corruptions import CATEGORIES, CATEGORY_MAP, CORRUPTION_KINDS
from .ensemble import EnsembleMember, EnsembleModel, ensemble_predict
from .frontend import vone_forward
from .image_io import load_image
from .training import normalize_batch

SEVERITIES = (1, 2, 3, 4, 5)


def predict_logits(model, batch, noise_stream=None, index_base=0):
    """Logits for a preprocessed batch from any supported model form:
    an EnsembleModel, an EnsembleMember, or bare backend params."""
    if isinstance(model, EnsembleModel):
        return ensemble_predict(model, batch, noise_stream, index_base)
    if isinstance(model, EnsembleMember):
        if model.frontend is None:
            return backend_forward(model.backend_params, batch)
        if model.stochastic and noise_stream is None:
            raise ValueError("noise_stream required for a stochastic model")
        stream = noise_stream if model.stochastic else None
        feats = vone_forward(model.frontend, batch, stream, index_base)
        return backend_forward(model.backend_params, feats)
    return backend_forward(model, batch)


def _model_classes(model):
    if isinstance(model, (EnsembleModel, EnsembleMember)):
        return model.n_classes
    return len(model["fc_b"])


def evaluate_accuracy(model, images, labels, noise_stream=None,
                      n_classes=None, batch=256):
    """Top-1 accuracy of a model or ensemble over an image set."""
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError("images/labels length mismatch")
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    k = _model_classes(model)
    if n_classes is not None and n_classes != k:
        raise ValueError(f"model emits {k} classes, dataset has {n_classes}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside the model's [0, {k}) range")
    hits = 0
    for start in range(0, len(labels), batch):
        xb = normalize_batch(images[start:start + batch])
        logits = predict_logits(model, xb, noise_stream, index_base=start)
        hits += int((logits.argmax(axis=1) == labels[start:start + batch]).sum())
    return hits / len(labels)


# --- aggregation -------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    """Aggregated accuracies for one model: per-cell, severity-averaged
    per kind, category means, and the overall corruption mean."""
    model_id: str
    clean: float
    cells: dict
    kinds: dict
    categories: dict
    overall: float
    aggregation: str = "kind"
    relative_to: str = None
    flagged: tuple = ()


def category_report(model_id, clean, cells, subset_ok=False, aggregation="kind"):
    """Aggregate per-(kind, severity) accuracies into an EvalReport.

    Kind value = mean over its severities; category value = mean over
    its kinds; overall = unweighted mean over kinds ("kind"), or mean of
    the four category means ("category").
    """
    if aggregation not in ("kind", "category"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    cells = {(str(k), int(s)): float(v) for (k, s), v in cells.items()}
    for (kind, sev) in cells:
        if kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {kind!r}")
        if sev not in SEVERITIES:
            raise ValueError(f"severity {sev} outside 1-5")
    missing = [(k, s) for k in CORRUPTION_KINDS for s in SEVERITIES
               if (k, s) not in cells]
    if missing and not subset_ok:
        raise ValueError(f"{len(missing)} missing cells (first: {missing[0]}); "
                         "pass subset_ok=True to aggregate a subset")
    kinds = {}
    for kind in CORRUPTION_KINDS:
        vals = [cells[(kind, s)] for s in SEVERITIES if (kind, s) in cells]
        if vals:
            kinds[kind] = float(np.mean(vals))
    categories = {}
    for cat in CATEGORIES:
        vals = [kinds[k] for k in CORRUPTION_KINDS
                if CATEGORY_MAP[k] == cat and k in kinds]
        if vals:
            categories[cat] = float(np.mean(vals))
    if aggregation == "kind":
        overall = float(np.mean(list(kinds.values())))
    else:
        overall = float(np.mean(list(categories.values())))
    return EvalReport(str(model_id), float(clean), cells, kinds, categories,
                      overall, aggregation=aggregation)


def _ratio(num, den, key, flagged):
    if den == 0.0:
        flagged.append(key)
        return float("nan")
    return num / den


def relative_report(model_report, base_report):
    """Each aggregate divided by the base model's corresponding value.

    Cells whose base value is zero come back as NaN and are listed in
    the report's flagged tuple instead of raising.
    """
    if set(model_report.cells) != set(base_report.cells):
        raise ValueError("model and base reports cover different cells")
    if model_report.aggregation != base_report.aggregation:
        raise ValueError("model and base reports use different aggregation")
    flagged = []
    cells = {k: _ratio(v, base_report.cells[k], ("cell",) + k, flagged)
             for k, v in model_report.cells.items()}
    kinds = {k: _ratio(v, base_report.kinds[k], ("kind", k), flagged)
             for k, v in model_report.kinds.items()}
    categories = {c: _ratio(v, base_report.categories[c], ("category", c), flagged)
                  for c, v in model_report.categories.items()}
    overall = _ratio(model_report.overall, base_report.overall,
                     ("overall",), flagged)
    clean = _ratio(model_report.clean, base_report.clean, ("clean",), flagged)
    return EvalReport(model_report.model_id, clean, cells, kinds, categories,
                      overall, aggregation=model_report.aggregation,
                      relative_to=base_report.model_id, flagged=tuple(flagged))


# --- corrupted-set ingestion --------------------------------------------------

def iter_corrupted_cells(root_path):
    """Yield ((kind, severity), [(source_id, path), ...]) per cell.

    Reads the generation manifest when present, otherwise walks a
    ``<kind>/<severity>/<class>/<image>`` tree.  Entries are sorted by
    source_id, so evaluation order is deterministic either way.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"corrupted set not found: {root}")
    cells = {}
    manifest = root / "manifest.csv"
    if manifest.is_file():
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["kind"], int(row["severity"]))
                if key[1] == 0:      # identity controls are not eval cells
                    continue
                cells.setdefault(key, []).append(
                    (row["source_id"], root / row["path"]))
    else:
        for kind_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            if kind_dir.name not in CORRUPTION_KINDS:
                raise ValueError(f"unexpected directory {kind_dir.name!r} "
                                 "in corrupted set")
            for sev_dir in sorted(p for p in kind_dir.iterdir() if p.is_dir()):
                key = (kind_dir.name, int(sev_dir.name))
                if key[1] == 0:
                    continue
                entries = []
                for img in sorted(sev_dir.rglob("*")):
                    if img.is_file():
                        entries.append(
                            (img.relative_to(sev_dir).with_suffix("").as_posix(),
                             img))
                cells[key] = entries
    if not cells:
        raise ValueError(f"no corruption cells under {root}")
    for key in sorted(cells):
        yield key, sorted(cells[key])


def evaluate_corrupted(model, root_path, class_names, noise_stream=None,
                       batch=256):
    """Per-(kind, severity) accuracy over a corrupted set on disk.

    Labels come from the class-folder part of each source_id; one cell
    is loaded at a time, so memory stays bounded by the cell size.
    """
    index = {c: i for i, c in enumerate(class_names)}
    out = {}
    for key, entries in iter_corrupted_cells(root_path):
        images = np.empty((len(entries), 3, 64, 64), dtype=np.float32)
        labels = np.empty(len(entries), dtype=np.int64)
        for i, (source_id, path) in enumerate(entries):
            cname = source_id.split("/")[0]
            if cname not in index:
                raise ValueError(f"source {source_id!r} does not start with "
                                 "a known class name")
            images[i] = load_image(path)
            labels[i] = index[cname]
        out[key] = evaluate_accuracy(model, images, labels, noise_stream,
                                     batch=batch)
    return out
