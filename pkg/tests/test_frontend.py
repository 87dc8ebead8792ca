import numpy as np
import pytest

from vonebench import frontend as fe
from vonebench.rng import RngStream


def small_config(name="standard", seed=0, **kw):
    kw.setdefault("n_simple", 8)
    kw.setdefault("n_complex", 8)
    return fe.variant_config(name, seed=seed, **kw)


def grating(theta_deg, f_cpd, phase=0.0, size=64, ppd=32.0):
    c = (np.arange(size) - size // 2) / ppd
    x = c[None, :]
    y = c[:, None]
    th = np.deg2rad(theta_deg)
    img = np.cos(2 * np.pi * f_cpd * (x * np.cos(th) + y * np.sin(th)) + phase)
    return np.repeat(img[None, None], 3, axis=1)  # [1,3,H,W]


def test_variant_table_rows():
    low = fe.variant_config("low_sf")
    assert (low.sf_low, low.sf_high) == (0.5, 2.0)
    assert (low.n_simple, low.n_complex) == (256, 256)
    assert low.noise_mode == "poisson"
    osim = fe.variant_config("only_simple")
    assert (osim.n_simple, osim.n_complex) == (512, 0)
    assert (osim.sf_low, osim.sf_high) == (0.5, 11.2)
    non = fe.variant_config("no_noise")
    std = fe.variant_config("standard")
    assert non.noise_mode == "none"
    assert (non.n_simple, non.n_complex, non.sf_low, non.sf_high) == \
           (std.n_simple, std.n_complex, std.sf_low, std.sf_high)
    assert fe.variant_config("low_noise").noise_mode == "sub_poisson"
    assert std.ppd == 32.0 and std.stride == 2


def test_variant_config_rejects_unknown_name():
    with pytest.raises(ValueError, match="standard"):
        fe.variant_config("med_sf")


def test_sample_gfb_deterministic_and_in_band():
    cfg = small_config("mid_sf", seed=11)
    a = fe.sample_gfb(cfg)
    b = fe.sample_gfb(cfg)
    assert a == b
    for p in a:
        assert 2.0 <= p.f <= 5.6
        assert p.sigma_x > 0 and p.sigma_y > 0
        assert 0 <= p.theta < 180
    assert [p.cell_type for p in a] == ["simple"] * 8 + ["complex"] * 8


def test_sample_gfb_rejects_empty_band():
    cfg = small_config(sf_low=3.0, sf_high=3.0)
    with pytest.raises(ValueError):
        fe.sample_gfb(cfg)


def test_sample_gfb_frequency_law_ks():
    # empirical f distribution matches the log-uniform default law
    cfg = fe.variant_config("standard", seed=3, n_simple=10000, n_complex=0)
    f = np.sort([p.f for p in fe.sample_gfb(cfg)])
    cdf_model = np.log(f / cfg.sf_low) / np.log(cfg.sf_high / cfg.sf_low)
    cdf_emp = np.arange(1, len(f) + 1) / len(f)
    ks = np.abs(cdf_emp - cdf_model).max()
    assert ks < 0.02


def test_sample_gfb_law_override():
    cfg = small_config(seed=5)
    fixed = {"theta": lambda s, n, c: np.full(n, 45.0)}
    got = fe.sample_gfb(cfg, laws=fixed)
    assert all(p.theta == 45.0 for p in got)
    # untouched laws keep their default draws
    base = fe.sample_gfb(cfg)
    assert [p.f for p in got] == [p.f for p in base]


def test_gabor_kernel_odd_phase_antisymmetric():
    p = fe.GaborChannelParams(theta=0.0, f=4.0, sigma_x=0.125, sigma_y=0.125,
                              phi=np.pi / 2, cell_type="simple")
    g = fe.gabor_kernel(p, 32.0, 19)
    assert abs(g.sum()) < 1e-12
    assert np.abs(g + g[:, ::-1]).max() < 1e-12  # odd along the carrier axis


def test_gabor_kernel_rotation_symmetry():
    base = dict(f=3.0, sigma_x=0.15, sigma_y=0.15, phi=0.7, cell_type="simple")
    g0 = fe.gabor_kernel(fe.GaborChannelParams(theta=0.0, **base), 32.0, 19)
    g90 = fe.gabor_kernel(fe.GaborChannelParams(theta=90.0, **base), 32.0, 19)
    assert min(np.abs(g90 - np.rot90(g0)).max(),
               np.abs(g90 - np.rot90(g0, -1)).max()) < 1e-9


def test_gabor_kernel_dft_peak():
    p = fe.GaborChannelParams(theta=30.0, f=4.0, sigma_x=0.125, sigma_y=0.1,
                              phi=0.3, cell_type="simple")
    g = fe.gabor_kernel(p, 32.0, 19)
    mag = np.abs(np.fft.fft2(g, s=(128, 128)))
    fr = np.fft.fftfreq(128, d=1 / 32.0)
    fy, fx = np.meshgrid(fr, fr, indexing="ij")
    peak = np.hypot(fx, fy).flat[np.argmax(mag)]
    assert abs(peak - 4.0) <= 32.0 / 128 + 1e-9


def test_gabor_kernel_rejects_bad_args():
    p = fe.GaborChannelParams(0.0, 4.0, -0.1, 0.1, 0.0, "simple")
    with pytest.raises(ValueError):
        fe.gabor_kernel(p, 32.0, 19)
    ok = fe.GaborChannelParams(0.0, 4.0, 0.1, 0.1, 0.0, "simple")
    with pytest.raises(ValueError):
        fe.gabor_kernel(ok, 32.0, 18)


def test_build_block_shapes_and_dc():
    cfg = small_config(seed=7)
    block = fe.build_vone_block(cfg)
    assert block.kernels.shape == (8 + 16, 3, 19, 19)
    assert not block.kernels.flags.writeable
    for kern in block.kernels:
        assert abs(kern.sum()) < 1e-2 * np.abs(kern).sum()


def test_vone_forward_zero_input_and_shape():
    cfg = small_config("no_noise", seed=1)
    block = fe.build_vone_block(cfg)
    out = fe.vone_forward(block, np.zeros((2, 3, 64, 64)))
    assert out.shape == (2, 16, 32, 32)
    assert np.all(out == 0.0)


def test_vone_forward_rejects_bad_channels():
    block = fe.build_vone_block(small_config("no_noise"))
    with pytest.raises(ValueError):
        fe.vone_forward(block, np.zeros((1, 4, 64, 64)))


def test_vone_forward_deterministic():
    cfg = small_config("no_noise", seed=2)
    block = fe.build_vone_block(cfg)
    x = RngStream(0).uniform(2 * 3 * 64 * 64).reshape(2, 3, 64, 64)
    a = fe.vone_forward(block, x)
    b = fe.vone_forward(block, x)
    assert np.array_equal(a, b)
    # stochastic mode: same stream key -> same output
    cfg2 = small_config("standard", seed=2)
    block2 = fe.build_vone_block(cfg2)
    n1 = fe.vone_forward(block2, x, RngStream(9).substream("noise"))
    n2 = fe.vone_forward(block2, x, RngStream(9).substream("noise"))
    assert np.array_equal(n1, n2)


def test_vone_forward_noise_keyed_by_image_index():
    cfg = small_config("standard", seed=4)
    block = fe.build_vone_block(cfg)
    x = RngStream(1).uniform(3 * 3 * 64 * 64).reshape(3, 3, 64, 64)
    full = fe.vone_forward(block, x, RngStream(5))
    head = fe.vone_forward(block, x[:2], RngStream(5))
    tail = fe.vone_forward(block, x[2:], RngStream(5), index_base=2)
    assert np.array_equal(full[:2], head)
    assert np.array_equal(full[2:], tail)


def test_sign_invariance():
    cfg = small_config("no_noise", seed=6)
    block = fe.build_vone_block(cfg)
    x = RngStream(2).normal(1 * 3 * 64 * 64).reshape(1, 3, 64, 64)
    pos = fe.vone_forward(block, x)
    neg = fe.vone_forward(block, -x)
    # complex energy is sign-invariant
    assert np.abs(pos[:, 8:] - neg[:, 8:]).max() < 1e-9
    # simple channels rectify: relu(z) - relu(-z) = z
    from vonebench import kernels as K
    z = K.conv2d_forward(x, block.kernels, 2, 9)[:, :8]
    assert np.abs((pos[:, :8] - neg[:, :8]) - z).max() < 1e-9


def test_complex_phase_invariance():
    laws = {
        "theta": lambda s, n, c: np.full(n, 40.0),
        "freq": lambda s, n, c: np.full(n, 4.0),
        "n_cycles": lambda s, n, c: np.full(n, 0.6),
        "aspect": lambda s, n, c: np.ones(n),
        "phase": lambda s, n, c: np.full(n, 0.25),
    }
    cfg = fe.variant_config("no_noise", seed=0, n_simple=0, n_complex=1)
    block = fe.build_vone_block(cfg, laws=laws)
    resp = []
    for ph in (0.0, np.pi / 4, np.pi / 2):
        out = fe.vone_forward(block, grating(40.0, 4.0, phase=ph))
        resp.append(out[0, 0, 8:-8, 8:-8].mean())  # interior, away from borders
    resp = np.array(resp)
    assert (resp.max() - resp.min()) / resp.mean() < 0.03


def test_orientation_equivariance():
    thetas = np.arange(0.0, 180.0, 7.5)
    laws = {
        "theta": lambda s, n, c: thetas.copy(),
        "freq": lambda s, n, c: np.full(n, 4.0),
        "n_cycles": lambda s, n, c: np.full(n, 0.6),
        "aspect": lambda s, n, c: np.ones(n),
        "phase": lambda s, n, c: np.zeros(n),
    }
    cfg = fe.variant_config("no_noise", seed=0, n_simple=0,
                            n_complex=len(thetas))
    block = fe.build_vone_block(cfg, laws=laws)

    def preferred(theta_g):
        out = fe.vone_forward(block, grating(theta_g, 4.0))
        return thetas[np.argmax(out[0, :, 8:-8, 8:-8].mean(axis=(1, 2)))]

    for theta_g, delta in [(30.0, 45.0), (60.0, 30.0), (15.0, 90.0)]:
        p0 = preferred(theta_g)
        p1 = preferred(theta_g + delta)
        shift = (p1 - p0) % 180.0
        err = min(abs(shift - delta % 180.0), 180.0 - abs(shift - delta % 180.0))
        assert err <= 7.5 / 2 + 1e-9


def test_apply_stochasticity_modes():
    mu = np.full(100000, 4.0)
    out = fe.apply_stochasticity(mu, "none", 1.0, None)
    assert np.array_equal(out, mu)
    pois = fe.apply_stochasticity(mu, "poisson", 1.0, RngStream(3))
    assert 3.88 <= pois.var() <= 4.12
    sub = fe.apply_stochasticity(mu, "sub_poisson", 1.0, RngStream(4))
    assert 0.97 <= sub.var() <= 1.03
    with pytest.raises(ValueError):
        fe.apply_stochasticity(np.array([-0.5, 1.0]), "poisson", 1.0, RngStream(5))
    with pytest.raises(ValueError):
        fe.apply_stochasticity(mu, "bogus", 1.0, RngStream(5))


def test_poisson_variance_scales_with_gamma():
    # var = mu / gamma for poisson mode
    mus = np.array([1.0, 2.0, 4.0, 8.0])
    for gamma in (1.0, 2.0):
        var = []
        for i, m in enumerate(mus):
            out = fe.apply_stochasticity(np.full(100000, m), "poisson", gamma,
                                         RngStream(10 + i))
            var.append(out.var())
        slope = np.polyfit(mus, var, 1)[0]
        assert abs(slope - 1.0 / gamma) < 0.05 / gamma


def test_serialization_roundtrip(tmp_path):
    cfg = small_config("low_noise", seed=9)
    block = fe.build_vone_block(cfg)
    path = tmp_path / "front.bin"
    fe.save_frontend(block, path)
    back = fe.load_frontend(path)
    assert back.config == block.config
    assert back.params == block.params
    assert np.array_equal(back.kernels, block.kernels)
    # byte-stable: saving twice produces identical files
    path2 = tmp_path / "front2.bin"
    fe.save_frontend(block, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        fe.load_frontend(bad)

def test_response_scale_standardizes_fit_set():
    stream = RngStream(77)
    imgs = stream.uniform(4 * 3 * 64 * 64).reshape(4, 3, 64, 64) * 2 - 1
    block = fe.build_vone_block(small_config("no_noise", seed=2, n_simple=4, n_complex=4))
    wrapped = fe.fit_response_scale(block, imgs)
    feats = fe.vone_forward(wrapped, imgs)
    np.testing.assert_allclose(feats.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    live = wrapped.scale > 1e-3
    np.testing.assert_allclose(feats.std(axis=(0, 2, 3))[live], 1.0, atol=1e-10)


def test_response_scale_fit_ignores_noise_mode():
    stream = RngStream(78)
    imgs = stream.uniform(3 * 3 * 64 * 64).reshape(3, 3, 64, 64)
    noisy = fe.build_vone_block(small_config("standard", seed=5, n_simple=4, n_complex=4))
    quiet = fe.build_vone_block(small_config("no_noise", seed=5, n_simple=4, n_complex=4))
    a = fe.fit_response_scale(noisy, imgs)
    b = fe.fit_response_scale(quiet, imgs)
    assert np.array_equal(a.offset, b.offset)
    assert np.array_equal(a.scale, b.scale)


def test_response_scale_noise_path_is_affine():
    stream = RngStream(79)
    imgs = stream.uniform(2 * 3 * 64 * 64).reshape(2, 3, 64, 64)
    block = fe.build_vone_block(small_config("standard", seed=6, n_simple=4, n_complex=4))
    wrapped = fe.fit_response_scale(block, imgs)
    raw = fe.vone_forward(block, imgs, RngStream(123).substream("n"), index_base=7)
    scaled = fe.vone_forward(wrapped, imgs, RngStream(123).substream("n"), index_base=7)
    expect = (raw - wrapped.offset[:, None, None]) / wrapped.scale[:, None, None]
    assert np.array_equal(scaled, expect)
    # wrapper exposes the frozen kernels and config of the inner block
    assert wrapped.kernels is block.kernels
    assert wrapped.config == block.config
    with pytest.raises(ValueError):
        wrapped.offset[0] = 1.0
