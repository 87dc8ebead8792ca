"""Uniform logit ensembling over trained front-end/back-end pairs.

Members are kept in a canonical order (sorted by name) so the summation
order, and therefore the floating-point result, never depends on the
order the caller listed them in.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend_net import backend_forward, load_backend
from .frontend import ScaledVOneBlock, load_frontend, vone_forward


def average_logits(member_logits, weights=None):
    """Weighted elementwise mean of per-member logit arrays.

    Arrays may be [K] or [N, K]; all members must agree.  weights
    default to uniform 1/M and must sum to 1.
    """
    if len(member_logits) == 0:
        raise ValueError("no member logits to average")
    arrs = [np.asarray(a, dtype=np.float64) for a in member_logits]
    for a in arrs[1:]:
        if a.shape != arrs[0].shape:
            raise ValueError(
                f"logit shape mismatch: {a.shape} vs {arrs[0].shape}")
    weights = _check_weights(weights, len(arrs))
    out = np.zeros_like(arrs[0])
    for w, a in zip(weights, arrs):
        out += w * a
    return out


def _check_weights(weights, n_members):
    if weights is None:
        return np.full(n_members, 1.0 / n_members)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_members,):
        raise ValueError(f"need one weight per member, got {weights.shape} "
                         f"for {n_members} members")
    if np.any(weights < 0):
        raise ValueError("negative member weight")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {weights.sum()}, expected 1")
    return weights


@dataclass(frozen=True)
class EnsembleMember:
    """One trained model: a name, backend parameters, and an optional
    frozen front-end (bare or response-scaled)."""
    name: str
    backend_params: dict
    frontend: object = None

    @property
    def n_classes(self):
        return len(self.backend_params["fc_b"])

    @property
    def stochastic(self):
        return (self.frontend is not None
                and self.frontend.config.noise_mode != "none")


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple
    weights: np.ndarray

    @property
    def n_classes(self):
        return self.members[0].n_classes


def make_ensemble(members, weights=None):
    """Validate and canonicalize members into an EnsembleModel."""
    if len(members) == 0:
        raise ValueError("ensemble needs at least one member")
    names = [m.name for m in members]
    if len(set(names)) != len(names):
        raise ValueError("duplicate member names")
    k = members[0].n_classes
    for m in members[1:]:
        if m.n_classes != k:
            raise ValueError(
                f"member {m.name} emits {m.n_classes} logits, expected {k}")
    weights = _check_weights(weights, len(members))
    order = np.argsort(np.asarray(names, dtype=object))
    return EnsembleModel(tuple(members[i] for i in order), weights[order])


def member_logits(member, batch, noise_root=None, index_base=0, draw=0):
    """One member's logits over a preprocessed batch.

    A stochastic member draws from its own substream of noise_root keyed
    by member name and draw number, so its output is independent of the
    other members and reproducible.
    """
    if member.frontend is None:
        feats = batch
    else:
        stream = None
        if member.stochastic:
            if noise_root is None:
                raise ValueError(
                    f"noise_root required: member {member.name} is stochastic")
            stream = noise_root.substream("member", member.name, draw)
        feats = vone_forward(member.frontend, batch, stream, index_base)
    return backend_forward(member.backend_params, feats)


def ensemble_predict(ens, batch, noise_root=None, index_base=0, noise_draws=1):
    """Average member logits over a preprocessed batch [N, 3, H, W].

    Deterministic ensembles may pass noise_root=None.
    """
    out = None
    for w, m in zip(ens.weights, ens.members):
        acc = None
        for draw in range(noise_draws):
            logits = member_logits(m, batch, noise_root, index_base, draw)
            acc = logits if acc is None else acc + logits
        contrib = w * (acc / noise_draws)
        out = contrib if out is None else out + contrib
    return out


# --- descriptor files --------------------------------------------------------

_FORMAT = "vone-ensemble"
_VERSION = 1


def save_ensemble_descriptor(path, entries, weights=None):
    """Write a JSON descriptor listing member checkpoints.

    entries: list of dicts with keys "name", "backend" (checkpoint path)
    and optionally "frontend" (serialized front-end path).  Paths are
    stored as given and resolved against the descriptor's directory on
    load when relative.
    """
    weights = _check_weights(weights, len(entries))
    names = [e["name"] for e in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate member names")
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "members": [
            {"name": e["name"], "backend": str(e["backend"]),
             "frontend": None if e.get("frontend") is None else str(e["frontend"])}
            for e in entries
        ],
        "weights": [float(w) for w in weights],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_member_checkpoint(path, name=None):
    """One EnsembleMember from a backend checkpoint file.

    The checkpoint metadata supplies the member name, the front-end
    snapshot path (relative to the checkpoint), and optional response
    standardization constants; `name` overrides the stored name.
    """
    path = Path(path)
    params, _, meta = load_backend(path)
    front = None
    if meta.get("frontend"):
        front = load_frontend(_resolve(path, meta["frontend"]))
        if "response_offset" in meta:
            front = ScaledVOneBlock(
                front,
                np.asarray(meta["response_offset"], dtype=np.float64),
                np.asarray(meta["response_scale"], dtype=np.float64))
    return EnsembleMember(name or meta.get("name", path.stem), params, front)


def load_ensemble(path):
    """Reconstruct an EnsembleModel from a descriptor file.

    Backend checkpoints whose metadata carries response standardization
    constants get their front-end wrapped accordingly, so the loaded
    member computes exactly what it was trained on.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != _FORMAT:
        raise ValueError("not an ensemble descriptor")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported descriptor version {doc.get('version')}")
    members = []
    for entry in doc["members"]:
        params, _, meta = load_backend(_resolve(path, entry["backend"]))
        front = None
        if entry.get("frontend"):
            front = load_frontend(_resolve(path, entry["frontend"]))
            if meta and "response_offset" in meta:
                front = ScaledVOneBlock(
                    front,
                    np.asarray(meta["response_offset"], dtype=np.float64),
                    np.asarray(meta["response_scale"], dtype=np.float64))
        members.append(EnsembleMember(entry["name"], params, front))
    return make_ensemble(members, np.asarray(doc["weights"], dtype=np.float64))


def _resolve(descriptor_path, ref):
    p = Path(ref)
    return p if p.is_absolute() else descriptor_path.parent / p
