"""8-bit RGB image files <-> float arrays in [0, 1], channel-first.

PNG goes through Pillow (which writes no timestamps, so files are
byte-stable); binary PPM (P6) is handled directly.
"""

import numpy as np
from PIL import Image


def to_uint8(img):
    """[3, H, W] floats in [0, 1] -> [H, W, 3] uint8, round-to-nearest."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {arr.shape}")
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr):
    """[H, W, 3] uint8 -> [3, H, W] floats in [0, 1]."""
    return arr.astype(np.float64).transpose(2, 0, 1) / 255.0


def save_image(path, img):
    """Write [3, H, W] floats in [0, 1] as 8-bit PNG or binary PPM."""
    path = str(path)
    data = to_uint8(img)
    if path.endswith(".ppm"):
        h, w = data.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(data.tobytes())
    else:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path):
    """Read an 8-bit RGB image file into [3, H, W] floats in [0, 1]."""
    path = str(path)
    if path.endswith(".ppm"):
        with open(path, "rb") as fh:
            raw = fh.read()
        fields = []
        pos = 0
        while len(fields) < 4:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while raw[pos : pos + 1] not in (b"\n", b""):
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
        if fields[0] != b"P6":
            raise ValueError(f"{path}: not a binary PPM file")
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PPM supported")
        pix = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
        return from_uint8(pix.reshape(h, w, 3))
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))
