"""The fifteen corruption algorithms.

Each function maps an [H, W, 3] float image in [0, 1] plus that kind's
severity parameters to a corrupted image in [0, 1].  Stochastic kinds draw
exclusively from the RngStream they are handed, one named substream per
random ingredient, so outputs are reproducible and insensitive to draw-count
changes elsewhere.
"""

import numpy as np
from scipy import ndimage

# --- shared helpers --------------------------------------------------------


def _disk_kernel(radius, alias_blur):
    L = np.arange(-8, 9)
    xx, yy = np.meshgrid(L, L)
    disk = ((xx ** 2 + yy ** 2) <= radius ** 2).astype(np.float64)
    disk /= disk.sum()
    disk = ndimage.gaussian_filter(disk, sigma=alias_blur, radius=1)
    return disk / disk.sum()


def _motion_kernel(radius, sigma, angle_deg):
    # vertical Gaussian line, rotated; renormalized so brightness is kept
    size = 2 * int(radius) + 1
    i = np.arange(size) - radius
    col = np.exp(-(i ** 2) / (2.0 * sigma ** 2))
    kern = np.zeros((size, size))
    kern[:, size // 2] = col / col.sum()
    kern = ndimage.rotate(kern, angle_deg, reshape=True, order=3)
    kern = np.maximum(kern, 0.0)
    return kern / kern.sum()


def _filter_channels(x, kern):
    out = np.empty_like(x)
    for d in range(x.shape[2]):
        out[:, :, d] = ndimage.correlate(x[:, :, d], kern, mode="mirror")
    return out


def _clipped_zoom(img, zoom):
    # zoom about the center, trimmed back to the original extent
    h = img.shape[0]
    ch = int(np.ceil(h / float(zoom)))
    top = (h - ch) // 2
    crop = img[top:top + ch, top:top + ch]
    out = ndimage.zoom(crop, (zoom, zoom, 1), order=1)
    trim = (out.shape[0] - h) // 2
    return out[trim:trim + h, trim:trim + h]


def plasma_fractal(stream, mapsize, wibbledecay):
    """Diamond-square heightmap on [0, 1]; mapsize must be a power of two."""
    assert mapsize & (mapsize - 1) == 0
    arr = np.empty((mapsize, mapsize))
    arr[0, 0] = 0
    stepsize = mapsize
    wibble = 100.0

    def wibbled(mean_of):
        noise = (stream.uniform(mean_of.size).reshape(mean_of.shape) * 2.0 - 1.0)
        return mean_of / 4 + wibble * noise * wibble

    while stepsize >= 2:
        # squares: centers from the four corners
        corner = arr[0:mapsize:stepsize, 0:mapsize:stepsize]
        acc = corner + np.roll(corner, -1, axis=0)
        acc += np.roll(acc, -1, axis=1)
        arr[stepsize // 2::stepsize, stepsize // 2::stepsize] = wibbled(acc)
        # diamonds: edge midpoints from their four neighbours
        dr = arr[stepsize // 2::stepsize, stepsize // 2::stepsize]
        ul = arr[0:mapsize:stepsize, 0:mapsize:stepsize]
        ltsum = (dr + np.roll(dr, 1, axis=0)) + (ul + np.roll(ul, -1, axis=1))
        arr[0:mapsize:stepsize, stepsize // 2::stepsize] = wibbled(ltsum)
        ttsum = (dr + np.roll(dr, 1, axis=1)) + (ul + np.roll(ul, -1, axis=0))
        arr[stepsize // 2::stepsize, 0:mapsize:stepsize] = wibbled(ttsum)
        stepsize //= 2
        wibble /= wibbledecay

    arr -= arr.min()
    return arr / arr.max()


def _gray(x):
    return 0.299 * x[:, :, 0] + 0.587 * x[:, :, 1] + 0.114 * x[:, :, 2]


# --- noise -----------------------------------------------------------------


def gaussian_noise(x, p, stream):
    noise = stream.normal(x.size).reshape(x.shape)
    return np.clip(x + noise * p["sigma"], 0, 1)


def shot_noise(x, p, stream):
    c = p["photons"]
    gen = stream.substream("poisson").generator()
    return np.clip(gen.poisson(x * c) / float(c), 0, 1)


def impulse_noise(x, p, stream):
    u = stream.uniform(x.size).reshape(x.shape)
    out = x.copy()
    half = p["amount"] / 2.0
    out[u < half] = 0.0
    out[(u >= half) & (u < p["amount"])] = 1.0
    return out


# --- blur ------------------------------------------------------------------


def defocus_blur(x, p, stream):
    kern = _disk_kernel(p["radius"], p["alias_blur"])
    return np.clip(_filter_channels(x, kern), 0, 1)


def glass_blur(x, p, stream):
    sigma, delta, iters = p["sigma"], int(p["max_delta"]), int(p["iterations"])
    size = x.shape[0]
    out = ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0))
    span = np.arange(size - delta, delta, -1)
    offs = stream.substream("shuffle").integers(
        2 * delta, n=2 * iters * len(span) ** 2) - delta
    k = 0
    for _ in range(iters):
        for h in span:
            for w in span:
                dy, dx = offs[k], offs[k + 1]
                k += 2
                hp, wp = h + dy, w + dx
                tmp = out[h, w].copy()
                out[h, w] = out[hp, wp]
                out[hp, wp] = tmp
    return np.clip(ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0)), 0, 1)


def motion_blur(x, p, stream):
    angle = stream.substream("angle").uniform() * 90.0 - 45.0
    kern = _motion_kernel(p["radius"], p["sigma"], angle)
    return np.clip(_filter_channels(x, kern), 0, 1)


def zoom_blur(x, p, stream):
    ladder = np.arange(1.0, p["zoom_max"], p["zoom_step"])
    acc = x.copy()
    for z in ladder:
        acc += _clipped_zoom(x, z)
    return np.clip(acc / (len(ladder) + 1), 0, 1)


# --- weather ---------------------------------------------------------------


def snow(x, p, stream):
    size = x.shape[0]
    layer = stream.substream("layer").normal(size * size).reshape(size, size)
    layer = layer * p["scale"] + p["location"]
    layer = _clipped_zoom(layer[:, :, None], p["zoom"])[:, :, 0]
    layer[layer < p["threshold"]] = 0.0
    layer = np.clip(layer, 0, 1)
    angle = stream.substream("angle").uniform() * 90.0 - 135.0
    kern = _motion_kernel(p["blur_radius"], p["blur_sigma"], angle)
    layer = ndimage.correlate(layer, kern, mode="mirror")
    whitened = np.maximum(x, _gray(x)[:, :, None] * 1.5 + 0.5)
    out = p["blend"] * x + (1 - p["blend"]) * whitened
    return np.clip(out + layer[:, :, None] + np.rot90(layer, 2)[:, :, None], 0, 1)


def frost_texture(stream, size=64):
    """Procedural frost: sparse bright crystals with directional streaks.

    Two plasma fractals (a rough base plus ridge lines from the level sets
    of a second) are streak-blurred, then thresholded so only the top 40%
    survives.  Crystals are bright on black, which keeps the overlay's
    footprint proportional to its blend weight.
    """
    mapsize = 1 << (size - 1).bit_length()
    base = plasma_fractal(stream.substream("base"), mapsize,
                          wibbledecay=2.0)[:size, :size]
    veins = plasma_fractal(stream.substream("veins"), mapsize,
                           wibbledecay=1.7)[:size, :size]
    ridges = (1.0 - np.abs(veins * 2.0 - 1.0)) ** 4
    tex = 0.65 * base + 0.35 * ridges
    angle = stream.substream("angle").uniform() * 180.0 - 90.0
    tex = ndimage.correlate(tex, _motion_kernel(4, 2.0, angle), mode="mirror")
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    cut = np.quantile(tex, 0.6)
    tex = np.clip((tex - cut) / (1.0 - cut), 0.0, 1.0)
    # slight blue tint
    return np.stack([0.92 * tex, 0.96 * tex, tex], axis=2)


def frost(x, p, stream):
    tex = frost_texture(stream, x.shape[0])
    return np.clip(p["image_weight"] * x + p["frost_weight"] * tex, 0, 1)


def fog(x, p, stream):
    size = x.shape[0]
    mapsize = 1 << (size - 1).bit_length()
    layer = plasma_fractal(stream.substream("plasma"), mapsize,
                           p["decay"])[:size, :size]
    max_val = x.max()
    out = x + p["strength"] * layer[:, :, None]
    return np.clip(out * max_val / (max_val + p["strength"]), 0, 1)


def brightness(x, p, stream):
    return np.clip(x + p["delta"], 0, 1)


# --- digital ---------------------------------------------------------------


def contrast(x, p, stream):
    means = x.mean(axis=(0, 1), keepdims=True)
    return np.clip((x - means) * p["factor"] + means, 0, 1)


def elastic_transform(x, p, stream):
    size = x.shape[0]
    s = size // 3
    center = size // 2
    pts1 = np.array([[center + s, center + s],
                     [center + s, center - s],
                     [center - s, center - s]], dtype=np.float64)
    shift = p["affine_shift"]
    jitter = stream.substream("affine").uniform(6).reshape(3, 2) * 2 * shift - shift
    pts2 = pts1 + jitter
    # affine A, b with A @ p1 + b = p2; warp needs the inverse (output -> input)
    ones = np.ones((3, 1))
    m = np.hstack([pts1, ones])
    coef = np.linalg.solve(m, pts2)  # [3, 2]: rows are A columns + offset
    a = coef[:2].T
    b = coef[2]
    a_inv = np.linalg.inv(a)
    grid = np.arange(size, dtype=np.float64)
    gx, gy = np.meshgrid(grid, grid)  # (x, y) per output pixel
    src = np.tensordot(a_inv, np.stack([gx - b[0], gy - b[1]]), axes=(1, 0))
    warped = np.empty_like(x)
    for d in range(3):
        warped[:, :, d] = ndimage.map_coordinates(
            x[:, :, d], [src[1], src[0]], order=1, mode="mirror")

    if p["alpha"] > 0:
        disp = stream.substream("disp")
        dx = disp.uniform(size * size).reshape(size, size) * 2 - 1
        dy = disp.uniform(size * size).reshape(size, size) * 2 - 1
        dx = ndimage.gaussian_filter(dx, p["smooth_sigma"], mode="reflect",
                                     truncate=3) * p["alpha"]
        dy = ndimage.gaussian_filter(dy, p["smooth_sigma"], mode="reflect",
                                     truncate=3) * p["alpha"]
        coords = [gy + dy, gx + dx]
        for d in range(3):
            warped[:, :, d] = ndimage.map_coordinates(
                warped[:, :, d], coords, order=1, mode="reflect")
    return np.clip(warped, 0, 1)


def pixelate(x, p, stream):
    from PIL import Image

    small = max(1, int(round(x.shape[0] * p["factor"])))
    im = Image.fromarray(np.clip(np.rint(x * 255), 0, 255).astype(np.uint8))
    im = im.resize((small, small), Image.Resampling.BOX)
    im = im.resize((x.shape[1], x.shape[0]), Image.Resampling.BOX)
    return np.asarray(im).astype(np.float64) / 255.0


# JPEG round-trip, implemented internally: 4:4:4 YCbCr, 8x8 DCT blocks,
# quality-scaled standard quantization tables.  Not bit-exact with codecs.

_QUANT_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_QUANT_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def _dct_matrix():
    i = np.arange(8)
    d = np.cos((2 * i[None, :] + 1) * i[:, None] * np.pi / 16)
    d[0] *= 1 / np.sqrt(2)
    return d * 0.5


def _scaled_table(base, quality):
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1, 255)


def _blockify(plane):
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)


def _unblockify(blocks, h, w):
    return blocks.reshape(h // 8, w // 8, 8, 8).transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_compression(x, p, stream):
    v = np.clip(np.rint(x * 255.0), 0, 255)
    r, g, b = v[:, :, 0], v[:, :, 1], v[:, :, 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0

    d = _dct_matrix()
    h, w = y.shape
    planes = []
    for plane, base in ((y, _QUANT_LUMA), (cb, _QUANT_CHROMA), (cr, _QUANT_CHROMA)):
        q = _scaled_table(base, p["quality"])
        blocks = _blockify(plane) - 128.0
        coefs = np.einsum("ij,njk,lk->nil", d, blocks, d)
        coefs = np.rint(coefs / q) * q
        rec = np.einsum("ji,njk,kl->nil", d, coefs, d) + 128.0
        planes.append(_unblockify(rec, h, w))
    y, cb, cr = planes

    r = y + 1.402 * (cr - 128.0)
    g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
    b = y + 1.772 * (cb - 128.0)
    return np.clip(np.stack([r, g, b], axis=2) / 255.0, 0, 1)
