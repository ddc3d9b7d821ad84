"""8-bit binary PGM (P5) export of magnitude images and error maps."""
import os
import re

import numpy as np


def to_gray(img, vmax=None):
    """Magnitude mapped linearly from [0, vmax] to 0..255 (clipped).

    ``vmax`` defaults to the image maximum; an all-zero image stays zero.
    """
    mag = np.abs(np.asarray(img)).astype(float)
    if mag.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {mag.shape}")
    top = float(mag.max()) if vmax is None else float(vmax)
    if top <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.clip(np.rint(mag / top * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    H, W = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    m = _HEADER.match(data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    W, H, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data[m.end():m.end() + H * W], dtype=np.uint8).reshape(H, W)


def export_pgm(img, path, scale="linear", vmax=None):
    """Write ``img`` as P5 and return the scale factor (gray levels per unit).

    ``scale="linear"`` maps the image's own maximum to 255;
    ``scale="fixed-max"`` uses the shared ``vmax`` so several images (e.g.
    error maps of competing methods) are directly comparable. The factor
    is appended to ``<dir>/scales.txt`` as ``<file> <vmax> <factor>``.
    """
    if scale == "linear":
        top = float(np.abs(img).max())
    elif scale == "fixed-max":
        if vmax is None:
            raise ValueError("fixed-max scaling needs vmax")
        top = float(vmax)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    write_pgm(path, to_gray(img, top))
    factor = 255.0 / top if top > 0 else 0.0
    side = os.path.join(os.path.dirname(os.path.abspath(path)), "scales.txt")
    with open(side, "a") as f:
        f.write(f"{os.path.basename(path)} {top!r} {factor!r}\n")
    return factor


def read_scales(directory):
    out = {}
    side = os.path.join(directory, "scales.txt")
    if os.path.exists(side):
        with open(side) as f:
            for line in f:
                name, top, factor = line.split()
                out[name] = (float(top), float(factor))
    return out
