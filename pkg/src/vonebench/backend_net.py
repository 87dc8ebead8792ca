"""Trainable classifier back-end used behind the frozen front-end.

Layer stack: 1x1 bottleneck conv (front-end channels -> B), 3x3 conv +
relu, 2x2 maxpool, 3x3 conv + relu, global average pool, dense layer to
K logits.  Every parameter has a hand-derived gradient path; the forward
pass optionally returns the cache the backward pass needs.  All widths
are configurable so desk-scale runs can shrink the network.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels as K
from .rng import RngStream

PARAM_ORDER = ("b_w", "b_b", "c1_w", "c1_b", "c2_w", "c2_b", "fc_w", "fc_b")


@dataclass(frozen=True)
class BackendConfig:
    in_channels: int
    n_classes: int
    bottleneck: int = 64
    conv1: int = 64
    conv2: int = 128
    seed: int = 0


def init_backend(config):
    """He-initialized parameter dict; biases start at zero.

    Each weight tensor draws from its own named substream, so adding or
    reordering parameters never shifts another tensor's values.
    """
    root = RngStream(config.seed).substream("backend-init")

    def he(name, shape, fan_in):
        eps = root.substream(name).normal(int(np.prod(shape)))
        return eps.reshape(shape) * np.sqrt(2.0 / fan_in)

    c = config
    return {
        "b_w": he("b_w", (c.bottleneck, c.in_channels, 1, 1), c.in_channels),
        "b_b": np.zeros(c.bottleneck),
        "c1_w": he("c1_w", (c.conv1, c.bottleneck, 3, 3), c.bottleneck * 9),
        "c1_b": np.zeros(c.conv1),
        "c2_w": he("c2_w", (c.conv2, c.conv1, 3, 3), c.conv1 * 9),
        "c2_b": np.zeros(c.conv2),
        "fc_w": he("fc_w", (c.n_classes, c.conv2), c.conv2),
        "fc_b": np.zeros(c.n_classes),
    }


def backend_forward(params, x, want_cache=False):
    """Logits [N, K] for a batch [N, C_in, H, W].

    With want_cache=True also returns the intermediate tensors
    backend_backward needs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    a0 = K.conv2d_forward(x, params["b_w"], 1, 0) + params["b_b"][:, None, None]
    z1 = K.conv2d_forward(a0, params["c1_w"], 1, 1) + params["c1_b"][:, None, None]
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = K.maxpool2d_forward(a1, 2, 2)
    z2 = K.conv2d_forward(p1, params["c2_w"], 1, 1) + params["c2_b"][:, None, None]
    a2 = np.maximum(z2, 0.0)
    gap = a2.mean(axis=(2, 3))
    logits = gap @ params["fc_w"].T + params["fc_b"]
    if not want_cache:
        return logits
    cache = {"x": x, "a0": a0, "z1": z1, "arg1": arg1, "p1": p1,
             "z2": z2, "gap": gap}
    return logits, cache


def backend_backward(params, cache, g_logits):
    """Parameter gradients given dLoss/dlogits [N, K].

    The gradient with respect to the input is not propagated further:
    whatever feeds this stack is frozen.
    """
    g = np.asarray(g_logits, dtype=np.float64)
    x, a0, z1, arg1, p1, z2, gap = (cache[k] for k in
                                    ("x", "a0", "z1", "arg1", "p1", "z2", "gap"))
    grads = {
        "fc_w": g.T @ gap,
        "fc_b": g.sum(axis=0),
    }
    d_gap = g @ params["fc_w"]
    hw = z2.shape[2] * z2.shape[3]
    d_z2 = np.where(z2 > 0, d_gap[:, :, None, None] / hw, 0.0)
    grads["c2_w"] = K.conv2d_grad_weights(p1, d_z2, 1, 1, 3, 3)
    grads["c2_b"] = d_z2.sum(axis=(0, 2, 3))
    d_p1 = K.conv2d_grad_input(d_z2, params["c2_w"], 1, 1,
                               p1.shape[2], p1.shape[3])
    d_a1 = K.maxpool2d_backward(d_p1, arg1, z1.shape[2], z1.shape[3])
    d_z1 = np.where(z1 > 0, d_a1, 0.0)
    grads["c1_w"] = K.conv2d_grad_weights(a0, d_z1, 1, 1, 3, 3)
    grads["c1_b"] = d_z1.sum(axis=(0, 2, 3))
    d_a0 = K.conv2d_grad_input(d_z1, params["c1_w"], 1, 1,
                               a0.shape[2], a0.shape[3])
    grads["b_w"] = K.conv2d_grad_weights(x, d_a0, 1, 0, 1, 1)
    grads["b_b"] = d_a0.sum(axis=(0, 2, 3))
    return grads


# --- serialization ---------------------------------------------------------

_CKPT_FORMAT = "vone-backend"
_CKPT_VERSION = 1


def save_backend(path, params, config, meta=None):
    """Checkpoint: JSON header (format tag, version, config echo, run
    metadata) plus the named parameter tensors in an npz archive."""
    header = {"format": _CKPT_FORMAT, "version": _CKPT_VERSION,
              "config": asdict(config), "meta": dict(meta or {})}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.asarray(json.dumps(header)), **params)


def load_backend(path):
    """Read a checkpoint back as (params, BackendConfig, meta dict)."""
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ValueError(f"{path}: not a backend checkpoint")
        header = json.loads(str(z["__header__"][()]))
        if header.get("format") != _CKPT_FORMAT:
            raise ValueError(f"{path}: not a backend checkpoint")
        if header.get("version") != _CKPT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint version {header.get('version')}")
        params = {k: z[k] for k in z.files if k != "__header__"}
    missing = [k for k in PARAM_ORDER if k not in params]
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {missing}")
    return params, BackendConfig(**header["config"]), header.get("meta", {})
