"""Harvest lesion-like patches from noise images into a reusable bank.

Patches are random rectangles cut from rendered noise images and kept only
when their mean intensity clears a threshold (default 180), which selects the
bright cloud-like regions. The bank persists to a little-endian binary file
so corruption runs can reuse one fixed patch population.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AttemptsExhaustedError, BankFormatError
from .image import check_gray
from .util import rng_from

DEFAULT_SIZE_RANGE = (5, 25)
DEFAULT_THRESHOLD = 180.0

_MAGIC = b"PLRB"
_VERSION = 1
_CHUNK = 1 << 16
_MIN_RATE = 1e-6


@dataclass(frozen=True)
class LesionPatch:
    width: int
    height: int
    pixels: np.ndarray          # (height, width) uint8
    source_image: int           # index into the source noise image list
    source_xy: tuple            # (x, y) top-left in the source image
    mean_intensity: float

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width):
            raise ValueError("patch pixel block does not match declared size")


@dataclass(frozen=True)
class BankParams:
    size_range: tuple = DEFAULT_SIZE_RANGE
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    n_sources: int = 0


@dataclass
class PatchBank:
    patches: list = field(default_factory=list)
    params: BankParams = BankParams()

    @property
    def count(self):
        return len(self.patches)

    def __len__(self):
        return len(self.patches)


def _check_size_range(size_range):
    lo, hi = int(size_range[0]), int(size_range[1])
    if lo < 1 or hi < lo:
        raise ValueError(f"bad size range [{lo}, {hi}]")
    return lo, hi


def sample_patch(noise_img, seed, size_range=DEFAULT_SIZE_RANGE):
    """Draw one candidate patch: uniform size in the range, uniform position.

    The mean-intensity filter is deliberately not applied here; callers
    decide whether the candidate survives.
    """
    noise_img = check_gray(noise_img)
    lo, hi = _check_size_range(size_range)
    h_img, w_img = noise_img.shape
    if w_img < hi or h_img < hi:
        raise ValueError(f"noise image {noise_img.shape} smaller than max patch {hi}")
    rng = rng_from(seed, 0x5A3)
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(0, w_img - w + 1))
    y = int(rng.integers(0, h_img - h + 1))
    block = noise_img[y:y + h, x:x + w].copy()
    return LesionPatch(width=w, height=h, pixels=block, source_image=0,
                       source_xy=(x, y), mean_intensity=float(block.mean()))


def build_bank(noise_imgs, target_count, threshold=DEFAULT_THRESHOLD,
               size_range=DEFAULT_SIZE_RANGE, seed=0):
    """Rejection-sample `target_count` patches whose mean exceeds `threshold`.

    Candidates are drawn in a deterministic stream from `seed` and screened
    with per-image integral images, so construction is fast and two runs with
    the same inputs produce byte-identical banks. Raises AttemptsExhausted
    once the observed acceptance rate drops below 1e-6.
    """
    if not noise_imgs:
        raise ValueError("need at least one noise image")
    imgs = [check_gray(im) for im in noise_imgs]
    lo, hi = _check_size_range(size_range)
    for im in imgs:
        if im.shape[0] < hi or im.shape[1] < hi:
            raise ValueError(f"noise image {im.shape} smaller than max patch {hi}")
    if target_count <= 0:
        raise ValueError("target_count must be positive")

    # Exact for uint8 inputs: every partial sum is an integer below 2^53.
    integrals = [np.pad(im.astype(np.float64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
                 for im in imgs]

    rng = rng_from(seed, 0xBA4C)
    accepted = []
    attempts = 0
    while len(accepted) < target_count:
        n = _CHUNK
        src = rng.integers(0, len(imgs), n)
        w = rng.integers(lo, hi + 1, n)
        h = rng.integers(lo, hi + 1, n)
        widths = np.array([im.shape[1] for im in imgs])
        heights = np.array([im.shape[0] for im in imgs])
        x = rng.integers(0, widths[src] - w + 1)
        y = rng.integers(0, heights[src] - h + 1)

        means = np.empty(n)
        for j, integ in enumerate(integrals):
            sel = src == j
            if not sel.any():
                continue
            xs, ys, ws, hs = x[sel], y[sel], w[sel], h[sel]
            total = (integ[ys + hs, xs + ws] - integ[ys, xs + ws]
                     - integ[ys + hs, xs] + integ[ys, xs])
            means[sel] = total / (ws * hs)

        for i in np.flatnonzero(means > threshold):
            if len(accepted) >= target_count:
                break
            block = imgs[src[i]][y[i]:y[i] + h[i], x[i]:x[i] + w[i]].copy()
            accepted.append(LesionPatch(
                width=int(w[i]), height=int(h[i]), pixels=block,
                source_image=int(src[i]), source_xy=(int(x[i]), int(y[i])),
                mean_intensity=float(means[i])))

        attempts += n
        if attempts >= 1_000_000 and len(accepted) / attempts < _MIN_RATE:
            raise AttemptsExhaustedError(
                f"{len(accepted)}/{attempts} candidates passed mean > {threshold}; "
                "threshold is incompatible with the noise parameters")

    params = BankParams(size_range=(lo, hi), threshold=float(threshold),
                        seed=int(seed), n_sources=len(imgs))
    return PatchBank(patches=accepted, params=params)


def save_bank(bank, path):
    """Write magic, version, params, then per-patch records (little-endian)."""
    with open(path, "wb") as fh:
        p = bank.params
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIdQII", _VERSION, p.size_range[0], p.size_range[1],
                             p.threshold, p.seed, p.n_sources, bank.count))
        for patch in bank.patches:
            fh.write(struct.pack("<IIIIId", patch.source_image,
                                 patch.source_xy[0], patch.source_xy[1],
                                 patch.width, patch.height, patch.mean_intensity))
            fh.write(patch.pixels.tobytes())


def load_bank(path):
    with open(path, "rb") as fh:
        data = fh.read()

    def take(fmt, offset):
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise BankFormatError("truncated bank file")
        return struct.unpack_from(fmt, data, offset), offset + size

    if data[:4] != _MAGIC:
        raise BankFormatError("bad magic bytes; not a patch bank file")
    (version, lo, hi, threshold, seed, n_sources, count), off = take("<IIIdQII", 4)
    if version != _VERSION:
        raise BankFormatError(f"unsupported bank version {version}")

    patches = []
    for _ in range(count):
        (src, x, y, w, h, mean), off = take("<IIIIId", off)
        n_bytes = w * h
        if off + n_bytes > len(data):
            raise BankFormatError("truncated bank file")
        pixels = np.frombuffer(data, dtype=np.uint8, count=n_bytes,
                               offset=off).reshape(h, w).copy()
        off += n_bytes
        patches.append(LesionPatch(width=w, height=h, pixels=pixels,
                                   source_image=src, source_xy=(x, y),
                                   mean_intensity=mean))
    params = BankParams(size_range=(lo, hi), threshold=threshold,
                        seed=seed, n_sources=n_sources)
    return PatchBank(patches=patches, params=params)
