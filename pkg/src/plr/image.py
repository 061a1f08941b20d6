"""Grayscale image container, file I/O, resizing, masking, affine augmentation.

Images are numpy arrays of shape (height, width) and dtype uint8; masks are
boolean arrays of the same shape (true = lung region). Supported file formats
are 8-bit single-channel PNG and binary PGM (P5, maxval 255); anything else is
rejected rather than converted so provenance stays honest. Mask files use the
same formats with intensity >= 128 meaning true.
"""

import io
import os
import re

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import UnsupportedFormatError
from .util import quantize_u8, rng_from

AUGMENT_RANGE = (0.8, 1.2)


def check_gray(img):
    """Validate the (H, W) uint8 image convention, returning the array."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected 2-d grayscale array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    if img.size == 0:
        raise ValueError("empty image")
    return img


def check_mask(mask, img=None):
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise ValueError("expected 2-d boolean mask")
    if img is not None and mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape}")
    return mask


def _load_pgm(data):
    # Binary PGM (P5). Header tokens may be separated by whitespace or
    # comment lines; maxval must be 255 (8-bit).
    m = re.match(rb"P5\s(?:\s*#.*[\r\n])*\s*(\d+)\s(?:\s*#.*[\r\n])*\s*(\d+)"
                 rb"\s(?:\s*#.*[\r\n])*\s*(\d+)\s", data)
    if m is None:
        raise UnsupportedFormatError("malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise UnsupportedFormatError(f"PGM maxval {maxval} is not 8-bit")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=m.end())
    if pixels.size < width * height:
        raise UnsupportedFormatError("truncated PGM payload")
    return pixels[: width * height].reshape(height, width).copy()


def load_image(path):
    """Load an 8-bit grayscale PNG or PGM file.

    Color, paletted, alpha-carrying, or deeper-than-8-bit files raise
    UnsupportedFormatError instead of being converted.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P5":
        return _load_pgm(data)
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: not a PNG or PGM file") from exc
    if pil.format != "PNG":
        raise UnsupportedFormatError(f"{path}: unsupported format {pil.format}")
    if pil.mode != "L":
        raise UnsupportedFormatError(
            f"{path}: mode {pil.mode} is not 8-bit grayscale; convert explicitly first")
    return np.asarray(pil, dtype=np.uint8).copy()


def save_image(img, path):
    """Write as binary PGM or 8-bit grayscale PNG, chosen by extension."""
    img = check_gray(img)
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".pnm"):
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.tobytes())
    elif ext == ".png":
        Image.fromarray(img, mode="L").save(path, format="PNG")
    else:
        raise UnsupportedFormatError(f"{path}: use a .png or .pgm extension")


def load_mask(path):
    return load_image(path) >= 128


def save_mask(mask, path):
    mask = check_mask(mask)
    save_image(np.where(mask, np.uint8(255), np.uint8(0)), path)


def resize_bilinear(img, out_w, out_h):
    """Bilinear resize with half-pixel-centered sampling.

    Output intensities are rounded half-up and clamped to [0, 255].
    Constant images stay constant value-for-value.
    """
    img = check_gray(img)
    if out_w <= 0 or out_h <= 0:
        raise ValueError("target dimensions must be positive")
    in_h, in_w = img.shape

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    x0, x1, fx = axis_coords(out_w, in_w)
    y0, y1, fy = axis_coords(out_h, in_h)
    pix = img.astype(np.float64)
    top = pix[np.ix_(y0, x0)] * (1.0 - fx) + pix[np.ix_(y0, x1)] * fx
    bot = pix[np.ix_(y1, x0)] * (1.0 - fx) + pix[np.ix_(y1, x1)] * fx
    out = top * (1.0 - fy)[:, None] + bot * fy[:, None]
    return quantize_u8(out)


def _sample_bilinear_zero(pix, sx, sy):
    # Bilinear gather at float coords; anything outside the image
    # contributes 0 (black fill).
    h, w = pix.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        yy = y0 + dy
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            xx = x0 + dx
            inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            vals = pix[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(inside, vals, 0.0) * wy * wx
    return out


def affine_augment(img, zoom, shear, seed=0):
    """Zoom/shear warp about the image center with bilinear sampling.

    Both factors live in [0.8, 1.2]; 1.0 means identity. zoom < 1 magnifies
    the content, zoom > 1 shrinks it and leaves a black border (the sampling
    is inverse-mapped, out-of-bounds sources fill with 0). The shear factor s
    applies offset (s - 1); the seed picks whether it acts on the x or the y
    axis, which is the only randomness here.
    """
    img = check_gray(img)
    lo, hi = AUGMENT_RANGE
    if not (lo <= zoom <= hi) or not (lo <= shear <= hi):
        raise ValueError(f"zoom/shear must lie in [{lo}, {hi}]")

    h, w = img.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    s = shear - 1.0
    if rng_from(seed, 0xAF1).integers(2) == 0:
        shear_m = np.array([[1.0, s], [0.0, 1.0]])
    else:
        shear_m = np.array([[1.0, 0.0], [s, 1.0]])
    m = zoom * shear_m

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx = xs - cx
    dy = ys - cy
    sx = m[0, 0] * dx + m[0, 1] * dy + cx
    sy = m[1, 0] * dx + m[1, 1] * dy + cy
    return quantize_u8(_sample_bilinear_zero(img.astype(np.float64), sx, sy))


def derive_lung_mask(img, threshold=100):
    """Heuristic lung mask: dark pixels minus the border-connected background.

    Fallback for when no mask file is supplied; externally provided masks
    always take precedence. May return an all-false mask (callers that paste
    must check).
    """
    img = check_gray(img)
    dark = img < threshold
    labels, n = ndimage.label(dark)
    if n == 0:
        return np.zeros_like(dark)
    border = np.unique(np.concatenate([
        labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]))
    border = border[border != 0]
    return dark & ~np.isin(labels, border)
