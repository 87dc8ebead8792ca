import numpy as np
import pytest
from scipy import ndimage

from vonebench import ops
from vonebench.backend_net import BackendConfig, init_backend
from vonebench.data import Dataset
from vonebench.frontend import build_vone_block, variant_config
from vonebench.rng import RngStream
from vonebench.training import (AugmentPolicy, DistillConfig, PlateauSchedule,
                                TrainConfig, augment, ce_loss_and_grad,
                                distill_loss, distill_loss_batch, gnt_inject,
                                _gnt_noise, normalize_batch, sgd_step, train,
                                warp_affine, write_training_log)

PLAIN = AugmentPolicy(scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0),
                      shift_frac=0.0, flip_prob=0.0)


def rand_image(seed, c=3, h=16, w=16):
    return RngStream(seed, 7).uniform(c * h * w).reshape(c, h, w)


# --- warp oracles -----------------------------------------------------------

def test_warp_identity_exact():
    x = rand_image(0)
    assert np.array_equal(warp_affine(x), x)


def test_warp_flip_and_shift_exact():
    x = rand_image(1)
    assert np.array_equal(warp_affine(x, flip=True), x[:, :, ::-1])
    shifted = warp_affine(x, shift=(2.0, 0.0))
    ref = np.zeros_like(x)
    ref[:, :, 2:] = x[:, :, :-2]
    assert np.abs(shifted - ref).max() < 1e-15


def test_warp_quarter_turn():
    x = rand_image(2)
    got = warp_affine(x, angle_deg=90.0)
    assert np.abs(got - np.rot90(x, -1, axes=(1, 2))).max() < 1e-12


def test_warp_rotation_matches_ndimage_interior():
    # sign convention differs from ndimage.rotate; borders use zero fill
    # with blending, so compare away from the frame edge
    # trim enough that every compared pixel's source stays inside the
    # frame (corner radius under rotation exceeds the half-extent)
    x = rand_image(3, c=1, h=33, w=33)
    for ang in (17.0, -28.5):
        mine = warp_affine(x, angle_deg=ang)[0]
        ref = ndimage.rotate(x[0], -ang, reshape=False, order=1,
                             mode="constant", cval=0.0)
        assert np.abs((mine - ref)[8:-8, 8:-8]).max() < 1e-12


def test_warp_scale_magnifies_ramp():
    ramp = np.tile(np.arange(8.0), (3, 8, 1))
    out = warp_affine(ramp, scale=2.0)
    # center-fixed 2x zoom halves the realized gradient
    assert abs(out[0, 4, 4] - 3.75) < 1e-12
    assert abs((out[0, 4, 5] - out[0, 4, 4]) - 0.5) < 1e-12


# --- augment ----------------------------------------------------------------

def test_augment_eval_mode_normalizes_only():
    x = np.full((3, 16, 16), 0.5)
    out = augment(x, AugmentPolicy(), RngStream(0).substream("aug"), False)
    assert np.array_equal(out, np.zeros_like(x))


def test_augment_train_deterministic():
    x = rand_image(4)
    a = augment(x, AugmentPolicy(), RngStream(1).substream("aug", 3), True)
    b = augment(x, AugmentPolicy(), RngStream(1).substream("aug", 3), True)
    assert np.array_equal(a, b)
    c = augment(x, AugmentPolicy(), RngStream(1).substream("aug", 4), True)
    assert not np.array_equal(a, c)


def test_augment_degenerate_policy_is_normalize():
    x = rand_image(5)
    out = augment(x, PLAIN, RngStream(2).substream("aug"), True)
    assert np.abs(out - (x - 0.5) / 0.5).max() < 1e-12


def test_augment_flip_rate():
    x = rand_image(6, h=8, w=8)
    policy = AugmentPolicy(scale_range=(1.0, 1.0), rotation_range=(0.0, 0.0),
                           shift_frac=0.0, flip_prob=0.5)
    flipped_ref = (x[:, :, ::-1] - 0.5) / 0.5
    root = RngStream(3).substream("aug")
    flips = sum(
        np.array_equal(augment(x, policy, root.substream(i), True), flipped_ref)
        for i in range(10_000))
    assert 0.485 <= flips / 10_000 <= 0.515


def test_normalize_batch_matches_eval_augment():
    xb = np.stack([rand_image(i) for i in range(4)])
    ref = np.stack([augment(img, AugmentPolicy(), RngStream(0), False)
                    for img in xb])
    assert np.array_equal(normalize_batch(xb), ref)


# --- gnt --------------------------------------------------------------------

def test_gnt_fraction_zero_is_identity():
    cfg = TrainConfig(gnt_enabled=True, gnt_fraction=0.0)
    x = rand_image(7)
    assert np.array_equal(gnt_inject(x, cfg, RngStream(0).substream("g")), x)


def test_gnt_injection_rate():
    cfg = TrainConfig(gnt_enabled=True)
    x = np.full((3, 8, 8), 0.5)
    root = RngStream(4).substream("gnt")
    injected = sum(
        not np.array_equal(gnt_inject(x, cfg, root.substream(i)), x)
        for i in range(10_000))
    assert 0.485 <= injected / 10_000 <= 0.515


def test_gnt_noise_sd():
    # pre-clamp noise SD; 3e5 samples give ~0.0008 sampling error on 0.6
    noise = _gnt_noise((300_000,), 0.6, RngStream(5).substream("sd"))
    assert 0.594 <= noise.std() <= 0.606


def test_gnt_output_clamped():
    cfg = TrainConfig(gnt_enabled=True, gnt_fraction=1.0)
    x = np.full((3, 16, 16), 0.5)
    out = gnt_inject(x, cfg, RngStream(6).substream("g"))
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.array_equal(out, x)


# --- losses -----------------------------------------------------------------

def test_distill_loss_gradient_fd():
    s = RngStream(8).normal(10) * 2.0
    t = RngStream(9).normal(10) * 2.0
    loss, grad = distill_loss(s, t, label=3)
    h = 1e-5
    worst = 0.0
    for j in range(10):
        sp = s.copy()
        sp[j] += h
        up, _ = distill_loss(sp, t, label=3)
        sp[j] -= 2 * h
        dn, _ = distill_loss(sp, t, label=3)
        fd = (up - dn) / (2 * h)
        worst = max(worst, abs(grad[j] - fd) / max(abs(grad[j]), abs(fd), 1e-10))
    assert worst < 1e-5


def test_distill_teacher_equals_student():
    s = RngStream(10).normal(6)
    loss, grad = distill_loss(s, s.copy(), label=0, soft_w=1.0, hard_w=0.0)
    pt = ops.softmax(s, 5.0)
    entropy = -(pt * np.log(pt)).sum()
    assert abs(loss - entropy) < 1e-12
    assert np.abs(grad).max() == 0.0


def test_distill_soft_zero_reduces_to_ce():
    s = RngStream(11).normal(5)
    t = RngStream(12).normal(5)
    loss, grad = distill_loss(s, t, label=2, soft_w=0.0, hard_w=1.0)
    q = ops.softmax(s)
    onehot = np.zeros(5)
    onehot[2] = 1.0
    assert loss == ops.cross_entropy(onehot, q)
    assert np.array_equal(grad, q - onehot)


def test_distill_loss_batch_bitwise_ce_when_soft_zero():
    logits = RngStream(13).normal(40).reshape(8, 5)
    teacher = RngStream(14).normal(40).reshape(8, 5)
    labels = np.arange(8) % 5
    ce = ce_loss_and_grad(logits, labels)
    dl = distill_loss_batch(logits, teacher, labels, 5.0, 0.0, 1.0)
    assert dl[0] == ce[0]
    assert np.array_equal(dl[1], ce[1])


def test_distill_loss_validation():
    s = np.zeros(4)
    with pytest.raises(ValueError, match="label"):
        distill_loss(s, s, label=4)
    with pytest.raises(ValueError, match="match"):
        distill_loss(s, np.zeros(3), label=0)
    with pytest.raises(ValueError, match="classes"):
        distill_loss(np.zeros(1), np.zeros(1), label=0)


# --- optimizer --------------------------------------------------------------

def test_sgd_hand_recurrence():
    p = {"w": np.array([1.0])}
    v = {"w": np.array([0.0])}
    g = {"w": np.array([1.0])}
    sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert abs(p["w"][0] - 0.9) < 1e-15
    sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert abs(v["w"][0] - 1.9) < 1e-15
    assert abs(p["w"][0] - 0.71) < 1e-15


def test_sgd_weight_decay_only():
    p = {"w": np.array([1.0])}
    v = {"w": np.array([0.0])}
    g = {"w": np.array([0.0])}
    sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0005)
    assert abs(p["w"][0] - 0.99995) < 1e-15


def test_sgd_zero_grad_identity():
    p = {"w": np.arange(4.0)}
    v = {"w": np.zeros(4)}
    sgd_step(p, {"w": np.zeros(4)}, v, lr=0.1, weight_decay=0.0)
    assert np.array_equal(p["w"], np.arange(4.0))


def test_sgd_shape_mismatch_rejected():
    p = {"w": np.zeros(3)}
    with pytest.raises(ValueError, match="shapes differ"):
        sgd_step(p, {"w": np.zeros(4)}, {"w": np.zeros(3)}, lr=0.1)
    with pytest.raises(ValueError, match="missing"):
        sgd_step(p, {}, {"w": np.zeros(3)}, lr=0.1)


def test_sgd_decay_two_path_equivalence():
    stream = RngStream(15)
    p1 = {"w": stream.substream("p").normal(12).reshape(3, 4)}
    g = {"w": stream.substream("g").normal(12).reshape(3, 4)}
    v1 = {"w": stream.substream("v").normal(12).reshape(3, 4)}
    p2 = {"w": p1["w"].copy()}
    v2 = {"w": v1["w"].copy()}
    wd = 0.0005
    sgd_step(p1, g, v1, lr=0.1, weight_decay=wd)
    pre = {"w": g["w"] + wd * p2["w"]}
    sgd_step(p2, pre, v2, lr=0.1, weight_decay=0.0)
    assert np.array_equal(p1["w"], p2["w"])
    assert np.array_equal(v1["w"], v2["w"])


def test_plateau_schedule():
    s = PlateauSchedule(0.1, patience=5, divisor=10.0)
    for loss in (1.0, 0.9, 0.8, 0.7):
        assert s.update(loss) == 0.1
    s = PlateauSchedule(0.1, patience=5, divisor=10.0)
    s.update(1.0)
    for i in range(4):
        assert s.update(1.0) == 0.1
    assert s.update(1.0) == pytest.approx(0.01)
    for i in range(4):
        assert s.update(1.0) == pytest.approx(0.01)
    assert s.update(1.0) == pytest.approx(0.001)


def test_plateau_resets_on_improvement():
    s = PlateauSchedule(0.1, patience=3, divisor=10.0)
    s.update(1.0)
    s.update(1.0)
    s.update(1.0)
    s.update(0.5)        # improvement wipes the stale counter
    s.update(0.5)
    s.update(0.5)
    assert s.lr == 0.1
    assert s.update(0.5) == pytest.approx(0.01)


# --- train loop -------------------------------------------------------------

def separable_dataset(n_per_class=20, seed=0):
    """Two classes split by channel dominance; linearly separable."""
    stream = RngStream(seed, 23)
    n = 2 * n_per_class
    images = np.empty((n, 3, 64, 64), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = i % 2
        base = np.full((3, 64, 64), 0.2)
        base[0 if c == 0 else 2] = 0.8
        noise = (stream.substream(i).uniform(3 * 64 * 64).reshape(3, 64, 64) - 0.5) * 0.1
        images[i] = np.clip(base + noise, 0, 1)
        labels[i] = c
    split = int(n * 0.8)
    return Dataset(images, labels, 2, np.arange(split), np.arange(split, n))


SMALL_BACKEND = BackendConfig(in_channels=3, n_classes=2, bottleneck=4,
                              conv1=6, conv2=8, seed=1)
FAST_CFG = TrainConfig(lr0=0.05, batch_size=16, epochs=5, seed=3)


def test_train_separable_sanity():
    ds = separable_dataset()
    params, log = train(SMALL_BACKEND, None, ds, FAST_CFG)
    assert log[-1]["train_acc"] > 0.95
    assert len(log) == 5
    assert all(set(r) == {"epoch", "lr", "train_loss", "train_acc",
                          "val_loss", "val_acc"} for r in log)


def test_train_deterministic():
    ds = separable_dataset(n_per_class=8)
    cfg = TrainConfig(lr0=0.05, batch_size=8, epochs=2, gnt_enabled=True, seed=5)
    p1, log1 = train(SMALL_BACKEND, None, ds, cfg)
    p2, log2 = train(SMALL_BACKEND, None, ds, cfg)
    for k in p1:
        assert np.array_equal(p1[k], p2[k])
    assert log1 == log2


def test_train_frontend_stays_frozen():
    ds = separable_dataset(n_per_class=6)
    fe = build_vone_block(variant_config(
        "standard", seed=2, n_simple=2, n_complex=2, kernel_px=7))
    before = fe.kernels.copy()
    cfg = TrainConfig(lr0=0.01, batch_size=8, epochs=1, seed=6)
    backend = BackendConfig(in_channels=4, n_classes=2, bottleneck=4,
                            conv1=6, conv2=8, seed=1)
    train(backend, fe, ds, cfg)
    assert np.array_equal(before, fe.kernels)


def test_train_distill_soft_zero_matches_ce_trajectory():
    ds = separable_dataset(n_per_class=8)
    teacher = init_backend(BackendConfig(in_channels=3, n_classes=2,
                                         bottleneck=4, conv1=6, conv2=8, seed=9))
    base = dict(lr0=0.05, batch_size=8, epochs=2, seed=7)
    p_ce, _ = train(SMALL_BACKEND, None, ds, TrainConfig(**base))
    dcfg = DistillConfig(teacher_params=teacher, temperature=3.0,
                         soft_weight=0.0, hard_weight=1.0)
    p_dl, _ = train(SMALL_BACKEND, None, ds, TrainConfig(**base, distill=dcfg))
    for k in p_ce:
        assert np.array_equal(p_ce[k], p_dl[k])


def test_train_teacher_cache_reproduces_run():
    ds = separable_dataset(n_per_class=8)
    teacher = init_backend(BackendConfig(in_channels=3, n_classes=2,
                                         bottleneck=4, conv1=6, conv2=8, seed=9))
    dcfg = DistillConfig(teacher_params=teacher)
    cfg = TrainConfig(lr0=0.01, batch_size=8, epochs=2, seed=8, distill=dcfg)
    cache = {}
    p1, _ = train(SMALL_BACKEND, None, ds, cfg, teacher_logit_cache=cache)
    assert cache
    p2, _ = train(SMALL_BACKEND, None, ds, cfg, teacher_logit_cache=cache)
    for k in p1:
        assert np.array_equal(p1[k], p2[k])


def test_train_divergence_aborts():
    ds = separable_dataset(n_per_class=8)
    cfg = TrainConfig(lr0=1e30, batch_size=8, epochs=10, seed=4)
    with np.errstate(invalid="ignore", over="ignore"):
        with pytest.raises(RuntimeError, match="diverged at epoch"):
            train(SMALL_BACKEND, None, ds, cfg)


def test_training_log_file(tmp_path):
    rows = [{"epoch": 0, "lr": 0.1, "train_loss": 1.5, "train_acc": 0.3,
             "val_loss": 1.4, "val_acc": 0.4}]
    path = tmp_path / "log.csv"
    write_training_log(path, rows)
    text = path.read_text().splitlines()
    assert text[0] == "epoch,lr,train_loss,train_acc,val_loss,val_acc"
    assert text[1].startswith("0,0.1,1.500000,0.300000")

def test_train_ensemble_teacher_of_duplicates_matches_single():
    from vonebench.ensemble import EnsembleMember, make_ensemble

    ds = separable_dataset(n_per_class=8)
    front = build_vone_block(variant_config(
        "no_noise", seed=11, n_simple=2, n_complex=2, kernel_px=7))
    teacher = init_backend(BackendConfig(in_channels=4, n_classes=2,
                                         bottleneck=4, conv1=6, conv2=8, seed=9))
    base = dict(lr0=0.02, batch_size=8, epochs=2, seed=12)
    single = DistillConfig(teacher_params=teacher, teacher_frontend=front)
    # averaging two copies of a deterministic teacher is bitwise the
    # same teacher signal, so the student trajectories must agree
    ens = make_ensemble([EnsembleMember("a", teacher, front),
                         EnsembleMember("b", teacher, front)])
    doubled = DistillConfig(teacher_params=ens)
    p1, _ = train(SMALL_BACKEND, None, ds, TrainConfig(**base, distill=single))
    p2, _ = train(SMALL_BACKEND, None, ds, TrainConfig(**base, distill=doubled))
    for k in p1:
        assert np.array_equal(p1[k], p2[k])
