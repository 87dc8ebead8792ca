"""Training loop for classifier back-ends behind a frozen front-end.

Covers the published recipe: scale/rotate/shift/flip augmentation with
zero fill, SGD with momentum and coupled weight decay, plateau-driven
learning-rate drops, optional Gaussian-noise injection on half the
images, and optional distillation against a trained teacher with soft
and hard cross-entropy terms.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backend_net import backend_backward, backend_forward, init_backend
from .ensemble import EnsembleModel, ensemble_predict
from .frontend import vone_forward
from .rng import RngStream


@dataclass(frozen=True)
class AugmentPolicy:
    scale_range: tuple = (1.0, 1.2)
    rotation_range: tuple = (-30.0, 30.0)   # degrees
    shift_frac: float = 0.05                # of width/height
    flip_prob: float = 0.5
    norm_offset: tuple = (0.5, 0.5, 0.5)
    norm_scale: tuple = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class DistillConfig:
    """Teacher reference plus loss weights; temperature applies to the
    soft term only and no extra T^2 rescaling is performed.

    The teacher may be bare backend params (with an optional frozen
    front-end) or an EnsembleModel, in which case its members draw their
    own noise."""
    teacher_params: object
    teacher_frontend: object = None
    temperature: float = 5.0
    soft_weight: float = 100.0
    hard_weight: float = 5.0
    teacher_noise_draws: int = 1


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 128
    epochs: int = 60
    plateau_patience: int = 5
    lr_divisor: float = 10.0
    gnt_enabled: bool = False
    gnt_sigma: float = 0.6
    gnt_fraction: float = 0.5
    distill: object = None                  # optional DistillConfig
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0


# --- augmentation -----------------------------------------------------------

_GRID_CACHE = {}


def _grid(h, w):
    if (h, w) not in _GRID_CACHE:
        _GRID_CACHE[(h, w)] = np.mgrid[0:h, 0:w].astype(np.float64)
    return _GRID_CACHE[(h, w)]


def warp_affine(image, scale=1.0, angle_deg=0.0, shift=(0.0, 0.0), flip=False):
    """Resample [C, H, W] under scale -> rotate -> shift -> flip about the
    image center, bilinear, zero fill.

    The four interpolation taps gather from a copy with a 1-px zero ring;
    source coordinates clamp into that ring, which gives zero fill without
    per-tap validity masks.
    """
    c, h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = _grid(h, w)
    xo, yo = xx - cx, yy - cy
    if flip:
        xo = -xo
    xo = xo - shift[0]
    yo = yo - shift[1]
    th = np.deg2rad(angle_deg)
    xs = (np.cos(th) * xo + np.sin(th) * yo) / scale + cx
    ys = (-np.sin(th) * xo + np.cos(th) * yo) / scale + cy
    ys = np.clip(ys, -1.0, float(h))
    xs = np.clip(xs, -1.0, float(w))
    y0 = np.clip(np.floor(ys), -1.0, h - 1.0)
    x0 = np.clip(np.floor(xs), -1.0, w - 1.0)
    fy = (ys - y0).ravel()
    fx = (xs - x0).ravel()
    yi = y0.astype(np.int64).ravel() + 1
    xi = x0.astype(np.int64).ravel() + 1
    padded = np.zeros((c, h + 2, w + 2))
    padded[:, 1:h + 1, 1:w + 1] = image
    flat = padded.reshape(c, -1)
    wp = w + 2
    base = yi * wp + xi
    out = ((1 - fy) * (1 - fx)) * flat[:, base]
    out += ((1 - fy) * fx) * flat[:, base + 1]
    out += (fy * (1 - fx)) * flat[:, base + wp]
    out += (fy * fx) * flat[:, base + wp + 1]
    return out.reshape(c, h, w)


def augment(image, policy, stream, train_mode):
    """Geometric jitter (train mode only) followed by normalization.

    Draw order is fixed: scale, angle, shift x, shift y, flip.  Zero-filled
    border pixels normalize to -1 like any black pixel.
    """
    x = np.asarray(image, dtype=np.float64)
    if train_mode:
        u = stream.uniform(5)
        lo, hi = policy.scale_range
        scale = lo + (hi - lo) * u[0]
        alo, ahi = policy.rotation_range
        angle = alo + (ahi - alo) * u[1]
        sx = (u[2] * 2 - 1) * policy.shift_frac * x.shape[2]
        sy = (u[3] * 2 - 1) * policy.shift_frac * x.shape[1]
        x = warp_affine(x, scale, angle, (sx, sy), bool(u[4] < policy.flip_prob))
    off = np.asarray(policy.norm_offset, dtype=np.float64)[:, None, None]
    div = np.asarray(policy.norm_scale, dtype=np.float64)[:, None, None]
    return (x - off) / div


def normalize_batch(images, policy=AugmentPolicy()):
    """Evaluation preprocessing for [N, 3, H, W]: normalization only."""
    x = np.asarray(images, dtype=np.float64)
    off = np.asarray(policy.norm_offset, dtype=np.float64)[:, None, None]
    div = np.asarray(policy.norm_scale, dtype=np.float64)[:, None, None]
    return (x - off) / div


def _gnt_noise(shape, sigma, stream):
    return stream.generator().standard_normal(int(np.prod(shape))).reshape(shape) * sigma


def gnt_inject(image, config, stream):
    """With probability gnt_fraction, add pixel noise N(0, gnt_sigma^2)
    to the raw [0,1] image and clamp; otherwise pass through."""
    x = np.asarray(image, dtype=np.float64)
    if config.gnt_fraction <= 0.0:
        return x
    if stream.uniform(1)[0] >= config.gnt_fraction:
        return x
    noisy = x + _gnt_noise(x.shape, config.gnt_sigma, stream.substream("pix"))
    return np.clip(noisy, 0.0, 1.0)


# --- losses -----------------------------------------------------------------

def ce_loss_and_grad(logits, labels):
    """Mean cross-entropy over a [N, K] batch and its logit gradient."""
    probs = ops.softmax_batch(logits)
    onehot = ops.one_hot(labels, logits.shape[1])
    loss = ops.cross_entropy_batch(onehot, probs)
    return loss, (probs - onehot) / len(labels)


def distill_loss(student_logits, teacher_logits, label, temperature=5.0,
                 soft_w=100.0, hard_w=5.0):
    """Soft + hard cross-entropy for one sample, with the closed-form
    logit gradient.

    loss = soft_w * CE(softmax(t/T), softmax(s/T)) + hard_w * CE(onehot, softmax(s));
    gradient = soft_w * (softmax(s/T) - softmax(t/T)) / T + hard_w * (softmax(s) - onehot).
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.ndim != 1 or s.shape != t.shape:
        raise ValueError(f"logit vectors must match, got {s.shape} vs {t.shape}")
    if s.size < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= int(label) < s.size:
        raise ValueError(f"label {label} out of range for {s.size} classes")
    ps = ops.softmax(s, temperature)
    pt = ops.softmax(t, temperature)
    q = ops.softmax(s)
    onehot = np.zeros(s.size)
    onehot[int(label)] = 1.0
    soft = ops.cross_entropy(pt, ps)
    hard = ops.cross_entropy(onehot, q)
    loss = soft_w * soft + hard_w * hard
    grad = soft_w * (ps - pt) / temperature + hard_w * (q - onehot)
    return loss, grad


def distill_loss_batch(student, teacher, labels, temperature, soft_w, hard_w):
    """Batch-mean distillation loss and gradient.  The hard term reuses
    ce_loss_and_grad, so soft_w=0, hard_w=1 reproduces plain CE training
    bit for bit."""
    hard_loss, hard_grad = ce_loss_and_grad(student, labels)
    ps = ops.softmax_batch(student, temperature)
    pt = ops.softmax_batch(teacher, temperature)
    soft_loss = ops.cross_entropy_batch(pt, ps)
    soft_grad = (ps - pt) / (temperature * len(labels))
    return (soft_w * soft_loss + hard_w * hard_loss,
            soft_w * soft_grad + hard_w * hard_grad)


# --- optimizer --------------------------------------------------------------

def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=0.0005):
    """g' = g + wd*p; v <- momentum*v + g'; p <- p - lr*v (in place).

    Decay couples into the gradient and applies to every tensor passed;
    this stack has no normalization offsets to exempt.
    """
    for k in params:
        if k not in grads or k not in velocity:
            raise ValueError(f"missing gradient or velocity for {k!r}")
        if params[k].shape != grads[k].shape or params[k].shape != velocity[k].shape:
            raise ValueError(
                f"{k!r}: shapes differ (param {params[k].shape}, grad "
                f"{grads[k].shape}, velocity {velocity[k].shape})")
        g = grads[k] + weight_decay * params[k]
        velocity[k] = momentum * velocity[k] + g
        params[k] -= lr * velocity[k]
    return params, velocity


class PlateauSchedule:
    """Divide lr by `divisor` after `patience` consecutive epochs without
    a strictly better validation loss; the stale counter resets on every
    improvement and after every reduction."""

    def __init__(self, lr0, patience=5, divisor=10.0):
        self.lr = float(lr0)
        self.patience = int(patience)
        self.divisor = float(divisor)
        self.best = np.inf
        self.stale = 0

    def update(self, val_loss):
        if val_loss < self.best:
            self.best = float(val_loss)
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr /= self.divisor
                self.stale = 0
        return self.lr


# --- loop -------------------------------------------------------------------

def _through_frontend(frontend, batch, noise_stream, index_base):
    if frontend is None:
        return batch
    return vone_forward(frontend, batch, noise_stream, index_base)


def _teacher_logits(distill, batch, root, epoch, index_base):
    d = distill
    if isinstance(d.teacher_params, EnsembleModel):
        stream = root.substream("teacher-noise", epoch)
        return ensemble_predict(d.teacher_params, batch, stream, index_base,
                                noise_draws=d.teacher_noise_draws)
    acc = None
    for draw in range(d.teacher_noise_draws):
        stream = root.substream("teacher-noise", epoch, draw)
        feats = _through_frontend(d.teacher_frontend, batch, stream, index_base)
        logits = backend_forward(d.teacher_params, feats)
        acc = logits if acc is None else acc + logits
    return acc / d.teacher_noise_draws


def _validate(params, frontend, dataset, policy, stream):
    idx = dataset.val_idx
    loss_sum, hits = 0.0, 0
    for start in range(0, len(idx), 256):
        sel = idx[start:start + 256]
        xb = normalize_batch(dataset.images[sel], policy)
        feats = _through_frontend(frontend, xb, stream, start)
        logits = backend_forward(params, feats)
        yb = dataset.labels[sel]
        probs = ops.softmax_batch(logits)
        onehot = ops.one_hot(yb, logits.shape[1])
        loss_sum += ops.cross_entropy_batch(onehot, probs) * len(sel)
        hits += int((logits.argmax(axis=1) == yb).sum())
    return loss_sum / len(idx), hits / len(idx)


def train(backend_config, frontend, dataset, config, log_path=None,
          teacher_logit_cache=None):
    """Run the full recipe and return (params, log rows).

    Noise, shuffling, augmentation, and noise-injection streams are all
    keyed on (purpose, epoch, item), so a run is reproducible and the
    distillation path consumes exactly the same student-side streams as
    plain CE training.  teacher_logit_cache (a dict) can be shared across
    student runs with the same data seed to skip repeated teacher passes.
    """
    root = RngStream(config.seed).substream("train")
    params = init_backend(backend_config)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    sched = PlateauSchedule(config.lr0, config.plateau_patience, config.lr_divisor)
    lr = config.lr0
    order_base = dataset.train_idx
    n = len(order_base)
    if n == 0:
        raise ValueError("dataset has no training split")
    kernels_before = None if frontend is None else frontend.kernels.copy()
    log = []
    for epoch in range(config.epochs):
        perm = root.substream("shuffle", epoch).permutation(n)
        order = order_base[perm]
        noise_e = root.substream("noise", epoch)
        loss_sum, hits = 0.0, 0
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            xb = np.empty((len(sel), 3) + dataset.images.shape[2:])
            for j, di in enumerate(sel):
                img = dataset.images[di].astype(np.float64)
                if config.gnt_enabled:
                    img = gnt_inject(img, config,
                                     root.substream("gnt", epoch, int(di)))
                xb[j] = augment(img, config.augment,
                                root.substream("aug", epoch, int(di)), True)
            feats = _through_frontend(frontend, xb, noise_e, start)
            logits, cache = backend_forward(params, feats, want_cache=True)
            yb = dataset.labels[sel]
            if config.distill is None:
                loss, g = ce_loss_and_grad(logits, yb)
            else:
                key = (epoch, start)
                if teacher_logit_cache is not None and key in teacher_logit_cache:
                    t_logits = teacher_logit_cache[key]
                else:
                    t_logits = _teacher_logits(config.distill, xb, root, epoch, start)
                    if teacher_logit_cache is not None:
                        teacher_logit_cache[key] = t_logits
                d = config.distill
                loss, g = distill_loss_batch(logits, t_logits, yb, d.temperature,
                                             d.soft_weight, d.hard_weight)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, batch "
                    f"{start // config.batch_size}: loss={loss}")
            grads = backend_backward(params, cache, g)
            sgd_step(params, grads, velocity, lr, config.momentum,
                     config.weight_decay)
            loss_sum += loss * len(sel)
            hits += int((logits.argmax(axis=1) == yb).sum())
        val_loss, val_acc = _validate(params, frontend, dataset, config.augment,
                                      root.substream("val", epoch))
        log.append({"epoch": epoch, "lr": lr, "train_loss": loss_sum / n,
                    "train_acc": hits / n, "val_loss": val_loss,
                    "val_acc": val_acc})
        lr = sched.update(val_loss)
    if kernels_before is not None and not np.array_equal(kernels_before,
                                                         frontend.kernels):
        raise RuntimeError("frozen front-end kernels changed during training")
    if log_path is not None:
        write_training_log(log_path, log)
    return params, log


def write_training_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['lr']:.10g}", f"{r['train_loss']:.6f}",
                        f"{r['train_acc']:.6f}", f"{r['val_loss']:.6f}",
                        f"{r['val_acc']:.6f}"])
