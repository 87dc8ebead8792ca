"""Fixed-weight V1 front-end: Gabor filter bank, simple/complex cells,
stochasticity generator, and the eight published variants.

The filter bank is sampled once from configurable distributions, frozen,
and applied as a strided convolution.  Simple channels are rectified
linear responses; complex channels are quadrature-pair energies.  The
stochasticity stage adds Gaussian noise whose variance tracks the mean
activation (Poisson-like), half that (sub-Poisson), or nothing.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels as K
from .rng import RngStream

NOISE_MODES = ("poisson", "sub_poisson", "none")

# variant -> (n_simple, n_complex, sf_low cpd, sf_high cpd, noise_mode)
VARIANT_TABLE = {
    "standard": (256, 256, 0.5, 11.2, "poisson"),
    "low_sf": (256, 256, 0.5, 2.0, "poisson"),
    "mid_sf": (256, 256, 2.0, 5.6, "poisson"),
    "high_sf": (256, 256, 5.6, 11.2, "poisson"),
    "only_simple": (512, 0, 0.5, 11.2, "poisson"),
    "only_complex": (0, 512, 0.5, 11.2, "poisson"),
    "low_noise": (256, 256, 0.5, 11.2, "sub_poisson"),
    "no_noise": (256, 256, 0.5, 11.2, "none"),
}

VARIANT_NAMES = tuple(VARIANT_TABLE)


@dataclass(frozen=True)
class GaborChannelParams:
    theta: float      # preferred orientation, degrees in [0, 180)
    f: float          # peak spatial frequency, cycles/degree
    sigma_x: float    # envelope SD along the carrier, degrees
    sigma_y: float    # envelope SD across the carrier, degrees
    phi: float        # carrier phase, radians
    cell_type: str    # "simple" or "complex"


@dataclass(frozen=True)
class VOneBlockConfig:
    variant_name: str
    n_simple: int
    n_complex: int
    sf_low: float
    sf_high: float
    noise_mode: str
    ppd: float = 32.0
    kernel_px: int = 19
    stride: int = 2
    noise_scale: float = 1.0   # gamma, spikes per unit activation
    seed: int = 0


@dataclass(frozen=True)
class VOneBlock:
    config: VOneBlockConfig
    params: tuple            # GaborChannelParams, length n_simple + n_complex
    kernels: np.ndarray      # [n_simple + 2*n_complex, 3, k, k], frozen

    def __post_init__(self):
        self.kernels.setflags(write=False)


def variant_config(name, seed=0, **overrides):
    """Config row for one of the eight published variants.

    `overrides` may replace any config field (e.g. scaled-down channel
    counts for small experiments); the variant's SF band and noise mode
    stay authoritative unless explicitly overridden.
    """
    if name not in VARIANT_TABLE:
        raise ValueError(
            f"unknown variant {name!r}; valid names: {', '.join(VARIANT_TABLE)}")
    n_s, n_c, lo, hi, noise = VARIANT_TABLE[name]
    cfg = VOneBlockConfig(variant_name=name, n_simple=n_s, n_complex=n_c,
                          sf_low=lo, sf_high=hi, noise_mode=noise, seed=seed)
    return replace(cfg, **overrides) if overrides else cfg


# --- sampling laws ---------------------------------------------------------
# The band edges are fixed per variant; the distribution shapes inside the
# band are not pinned down, so each law is replaceable via sample_gfb(laws=).
# n_cycles (envelope SD in carrier periods) is kept >= 0.4 and the envelope
# SD is floored at 1.5 px: narrower envelopes either merge the two spectral
# lobes of the cosine or fall under the sampling grid, and the measured peak
# frequency drifts out of the nominal band.

N_CYCLES_RANGE = (0.4, 0.8)
ASPECT_RANGE = (0.5, 1.0)
SIGMA_PX_FLOOR = 1.5


def _log_uniform(stream, n, lo, hi):
    return lo * np.exp(stream.uniform(n) * np.log(hi / lo))


DEFAULT_LAWS = {
    "theta": lambda stream, n, cfg: stream.uniform(n) * 180.0,
    "freq": lambda stream, n, cfg: _log_uniform(stream, n, cfg.sf_low, cfg.sf_high),
    "n_cycles": lambda stream, n, cfg: _log_uniform(stream, n, *N_CYCLES_RANGE),
    "aspect": lambda stream, n, cfg: ASPECT_RANGE[0] + stream.uniform(n) * (ASPECT_RANGE[1] - ASPECT_RANGE[0]),
    "phase": lambda stream, n, cfg: stream.uniform(n) * 2.0 * np.pi,
}


def sample_gfb(config, laws=None):
    """Draw the frozen per-channel Gabor parameters for `config`.

    Deterministic in config.seed.  Each law gets its own named substream
    so replacing one never perturbs the draws of another.
    """
    if config.sf_low >= config.sf_high:
        raise ValueError(f"empty SF band [{config.sf_low}, {config.sf_high}]")
    if config.noise_mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {config.noise_mode!r}")
    use = dict(DEFAULT_LAWS)
    if laws:
        use.update(laws)
    n = config.n_simple + config.n_complex
    root = RngStream(config.seed).substream("gfb")
    draws = {name: np.asarray(law(root.substream(name), n, config))
             for name, law in use.items()}
    out = []
    for i in range(n):
        f = float(draws["freq"][i])
        sx = max(float(draws["n_cycles"][i]) / f, SIGMA_PX_FLOOR / config.ppd)
        out.append(GaborChannelParams(
            theta=float(draws["theta"][i]),
            f=f,
            sigma_x=sx,
            sigma_y=sx * float(draws["aspect"][i]),
            phi=float(draws["phase"][i]),
            cell_type="simple" if i < config.n_simple else "complex",
        ))
    return out


def gabor_kernel(p, ppd, kernel_px, phase_offset=0.0):
    """Render one Gabor on a kernel_px grid (spacing 1/ppd degrees).

    G(x,y) = exp(-(x'^2/2sx^2 + y'^2/2sy^2)) * cos(2 pi f x' + phi), with
    x' = x cos(theta) + y sin(theta), y' = -x sin(theta) + y cos(theta).
    The result is DC-corrected (envelope-weighted mean subtracted, so the
    spatial sum is exactly zero) and L2-normalized.
    """
    if kernel_px % 2 == 0:
        raise ValueError("kernel_px must be odd")
    if p.sigma_x <= 0 or p.sigma_y <= 0:
        raise ValueError("envelope sigmas must be positive")
    half = kernel_px // 2
    c = (np.arange(kernel_px) - half) / ppd
    x = c[None, :]
    y = c[:, None]
    th = np.deg2rad(p.theta)
    xr = x * np.cos(th) + y * np.sin(th)
    yr = -x * np.sin(th) + y * np.cos(th)
    env = np.exp(-(xr ** 2 / (2 * p.sigma_x ** 2) + yr ** 2 / (2 * p.sigma_y ** 2)))
    g = env * np.cos(2 * np.pi * p.f * xr + p.phi + phase_offset)
    g = g - env * (g.sum() / env.sum())
    return g / np.linalg.norm(g)


def build_vone_block(config, laws=None):
    """Sample the filter bank and bake the frozen convolution kernels.

    Kernel layout: one kernel per simple channel, then a quadrature pair
    (phi, phi + pi/2) per complex channel.  Each Gabor acts on the mean of
    the RGB planes, implemented by replicating it across the three input
    channels at weight 1/3.
    """
    params = sample_gfb(config, laws)
    k = config.kernel_px
    n_s, n_c = config.n_simple, config.n_complex
    bank = np.empty((n_s + 2 * n_c, 3, k, k))
    for i, p in enumerate(params[:n_s]):
        bank[i, :] = gabor_kernel(p, config.ppd, k) / 3.0
    for j, p in enumerate(params[n_s:]):
        bank[n_s + 2 * j, :] = gabor_kernel(p, config.ppd, k) / 3.0
        bank[n_s + 2 * j + 1, :] = gabor_kernel(p, config.ppd, k, phase_offset=np.pi / 2) / 3.0
    return VOneBlock(config=config, params=tuple(params), kernels=bank)


def apply_stochasticity(mu, mode, gamma, stream):
    """mu + sigma(gamma*mu) * eps / gamma, eps ~ N(0,1) i.i.d.

    sigma(m) = sqrt(m) for poisson, sqrt(m)/2 for sub_poisson; `none`
    returns the input unchanged.  No clamping afterwards: downstream
    layers receive signed values.

    eps comes from the stream's ziggurat generator (draw count is not
    position-accounted), so hand each call its own single-use substream.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mode == "none":
        return mu
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    if np.any(mu < 0):
        raise ValueError("negative activations reached the stochasticity stage")
    sigma = np.sqrt(gamma * mu)
    if mode == "sub_poisson":
        sigma = sigma / 2.0
    eps = stream.generator().standard_normal(mu.size).reshape(mu.shape)
    return mu + sigma * eps / gamma


def vone_forward(block, batch, noise_stream=None, index_base=0):
    """Run the frozen front-end over [N, 3, H, W].

    Noise draws are keyed per image index (index_base + position), so an
    image's output does not depend on batch size or on the other images;
    callers that chunk a larger set pass the chunk offset as index_base.
    noise_stream may be None only for noise_mode "none".
    """
    if isinstance(block, ScaledVOneBlock):
        feats = vone_forward(block.block, batch, noise_stream, index_base)
        return (feats - block.offset[:, None, None]) / block.scale[:, None, None]
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ValueError(f"expected [N, 3, H, W] input, got {batch.shape}")
    cfg = block.config
    pad = (cfg.kernel_px - 1) // 2
    # the bank replicates each (grayscale) Gabor at weight 1/3 per RGB
    # plane, so convolving the channel mean with the summed kernels is the
    # same filter at a third of the im2col cost
    gray = batch.mean(axis=1, keepdims=True)
    wg = block.kernels.sum(axis=1, keepdims=True)
    z = K.conv2d_forward(gray, wg, cfg.stride, pad)
    mu = rectify_responses(z, cfg.n_simple, cfg.n_complex)
    if cfg.noise_mode == "none":
        return mu
    if noise_stream is None:
        raise ValueError("noise_stream required for stochastic front-ends")
    if np.any(mu < 0):
        raise ValueError("negative activations reached the stochasticity stage")
    n = mu.shape[0]
    eps = np.empty((n, mu[0].size))
    for i in range(n):
        # one single-use substream per image; the ziggurat generator's
        # variable draw count never leaks across images that way
        g = noise_stream.substream("img", index_base + i).generator()
        eps[i] = g.standard_normal(mu[0].size)
    gamma = cfg.noise_scale
    sigma = np.sqrt(gamma * mu)
    if cfg.noise_mode == "sub_poisson":
        sigma = sigma / 2.0
    return mu + sigma * eps.reshape(mu.shape) / gamma


@dataclass(frozen=True)
class ScaledVOneBlock:
    """A front-end plus fixed per-channel output standardization.

    Raw response power varies by more than an order of magnitude across
    channels, which destabilizes back-ends that have no normalization
    layers of their own.  The constants are fitted once on sample images
    and frozen, so the wrapped block is still a fixed feature extractor.
    """
    block: VOneBlock
    offset: np.ndarray   # [n_simple + n_complex]
    scale: np.ndarray    # [n_simple + n_complex]

    def __post_init__(self):
        self.offset.setflags(write=False)
        self.scale.setflags(write=False)

    @property
    def config(self):
        return self.block.config

    @property
    def kernels(self):
        return self.block.kernels


def fit_response_scale(block, images, floor=1e-3):
    """Standardization constants from the mean (noise-free) responses to
    sample images; returns the wrapped block.  The std is floored so
    channels that never respond cannot blow up the quotient."""
    det = VOneBlock(replace(block.config, noise_mode="none"),
                    block.params, block.kernels.copy())
    feats = vone_forward(det, images)
    offset = feats.mean(axis=(0, 2, 3))
    scale = np.maximum(feats.std(axis=(0, 2, 3)), floor)
    return ScaledVOneBlock(block, offset, scale)


def rectify_responses(z, n_simple, n_complex):
    """Simple/complex nonlinearities over raw filter responses.

    z: [N, n_simple + 2*n_complex, H, W] -> [N, n_simple + n_complex, H, W].
    """
    n = z.shape[0]
    simple = np.maximum(z[:, :n_simple], 0.0)
    if n_complex == 0:
        return simple
    pairs = z[:, n_simple:].reshape(n, n_complex, 2, z.shape[2], z.shape[3])
    energy = np.sqrt(pairs[:, :, 0] ** 2 + pairs[:, :, 1] ** 2)
    if n_simple == 0:
        return energy
    return np.concatenate([simple, energy], axis=1)


# --- serialization ---------------------------------------------------------

_MAGIC = b"VONE"
_VERSION = 1
_NOISE_CODE = {m: i for i, m in enumerate(NOISE_MODES)}
_CELL_CODE = {"simple": 0, "complex": 1}


def save_frontend(block, path):
    """Binary snapshot: header, per-channel parameter table, raw kernels.

    All fields little-endian; the kernel payload round-trips bit-exactly.
    """
    cfg = block.config
    name = cfg.variant_name.encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack(
            "<IIddBdIIdQ", cfg.n_simple, cfg.n_complex, cfg.sf_low, cfg.sf_high,
            _NOISE_CODE[cfg.noise_mode], cfg.ppd, cfg.kernel_px, cfg.stride,
            cfg.noise_scale, cfg.seed))
        fh.write(struct.pack("<I", len(block.params)))
        for p in block.params:
            fh.write(struct.pack("<dddddB", p.theta, p.f, p.sigma_x,
                                 p.sigma_y, p.phi, _CELL_CODE[p.cell_type]))
        fh.write(struct.pack("<IIII", *block.kernels.shape))
        fh.write(np.ascontiguousarray(block.kernels, dtype="<f8").tobytes())


def load_frontend(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError("not a front-end snapshot file")
    ver = struct.unpack_from("<I", raw, 4)[0]
    if ver != _VERSION:
        raise ValueError(f"unsupported snapshot version {ver}")
    off = 8
    nlen = struct.unpack_from("<H", raw, off)[0]
    off += 2
    name = raw[off:off + nlen].decode()
    off += nlen
    (n_s, n_c, lo, hi, noise_code, ppd, kpx, stride,
     gamma, seed) = struct.unpack_from("<IIddBdIIdQ", raw, off)
    off += struct.calcsize("<IIddBdIIdQ")
    cfg = VOneBlockConfig(variant_name=name, n_simple=n_s, n_complex=n_c,
                          sf_low=lo, sf_high=hi,
                          noise_mode=NOISE_MODES[noise_code], ppd=ppd,
                          kernel_px=kpx, stride=stride, noise_scale=gamma,
                          seed=seed)
    n_params = struct.unpack_from("<I", raw, off)[0]
    off += 4
    params = []
    for _ in range(n_params):
        th, f, sx, sy, phi, cell = struct.unpack_from("<dddddB", raw, off)
        off += struct.calcsize("<dddddB")
        params.append(GaborChannelParams(th, f, sx, sy, phi,
                                         "simple" if cell == 0 else "complex"))
    shape = struct.unpack_from("<IIII", raw, off)
    off += 16
    count = int(np.prod(shape))
    bank = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    bank = bank.reshape(shape).astype(np.float64)
    return VOneBlock(config=cfg, params=tuple(params), kernels=bank)
