"""Turn normal scans into pseudo-diseased ones.

Three strategies: pasting bright noise patches into the lung region
(the interesting one), blurring the whole image with a small Gaussian,
and shuffling pixels inside a coarse grid of blocks. All three leave a
paired restoration target (the untouched original), which is what the
pretext task trains against.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBankError, EmptyMaskError
from .image import check_gray, check_mask, derive_lung_mask, load_image, load_mask, save_image
from .manifest import DatasetManifest, write_manifest
from .util import quantize_u8, rng_from

STRATEGIES = ("perlin", "gaussian", "shuffle")
PASTE_MODES = ("replace", "max")


@dataclass(frozen=True)
class CorruptionSpec:
    strategy: str = "perlin"
    patches_per_image: int = 30
    kernel_size: int = 5
    sigma: float | None = None    # None resolves to the auto formula
    grid: int = 10
    paste_mode: str = "replace"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if self.patches_per_image < 0:
            raise ValueError("patches_per_image must be >= 0")
        if self.paste_mode not in PASTE_MODES:
            raise ValueError(f"unknown paste mode {self.paste_mode!r}")


def paste_patches(img, mask, bank, count, seed=0, mode="replace"):
    """Paste `count` bank patches at random lung locations.

    Each patch is drawn uniformly with replacement and centered on a
    uniformly drawn true-mask pixel. Only mask-true pixels inside the patch
    rectangle change; mode "replace" overwrites them, mode "max" takes the
    per-pixel maximum (no dark seams). Patches may overlap; later ones win.
    """
    img = check_gray(img)
    mask = check_mask(mask, img)
    if mode not in PASTE_MODES:
        raise ValueError(f"unknown paste mode {mode!r}")
    if count == 0:
        return img.copy()
    if len(bank) == 0:
        raise EmptyBankError("patch bank is empty")
    true_ys, true_xs = np.nonzero(mask)
    if true_ys.size == 0:
        raise EmptyMaskError("mask has no true pixels to paste into")

    rng = rng_from(seed, 0x9A57E)
    out = img.copy()
    h_img, w_img = img.shape
    for _ in range(count):
        patch = bank.patches[int(rng.integers(len(bank)))]
        c = int(rng.integers(true_ys.size))
        cy, cx = int(true_ys[c]), int(true_xs[c])
        top = cy - patch.height // 2
        left = cx - patch.width // 2
        y0, y1 = max(top, 0), min(top + patch.height, h_img)
        x0, x1 = max(left, 0), min(left + patch.width, w_img)
        block = patch.pixels[y0 - top:y1 - top, x0 - left:x1 - left]
        region_mask = mask[y0:y1, x0:x1]
        region = out[y0:y1, x0:x1]
        if mode == "replace":
            region[region_mask] = block[region_mask]
        else:
            np.maximum(region, block, out=region, where=region_mask)
    return out


def auto_sigma(kernel_size):
    """De-facto convention for 'sigma unset': 0.3*((k-1)*0.5 - 1) + 0.8."""
    return 0.3 * ((kernel_size - 1) * 0.5 - 1.0) + 0.8


def gaussian_kernel1d(kernel_size, sigma=None):
    """Normalized 1D Gaussian taps; weights sum to 1 within 1e-12."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    if sigma is None or sigma <= 0:
        sigma = auto_sigma(kernel_size)
    r = kernel_size // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img, kernel_size=5, sigma=None):
    """Separable Gaussian blur with reflect (mirror, edge not repeated) borders."""
    img = check_gray(img)
    return quantize_u8(gaussian_blur_float(img.astype(np.float64), kernel_size, sigma))


def gaussian_blur_float(pix, kernel_size=5, sigma=None):
    """Float-valued blur before quantization; used directly by tests."""
    kernel = gaussian_kernel1d(kernel_size, sigma)
    r = kernel_size // 2

    def conv_rows(arr):
        padded = np.pad(arr, ((0, 0), (r, r)), mode="reflect")
        out = np.zeros_like(arr)
        for i, w in enumerate(kernel):
            out += w * padded[:, i:i + arr.shape[1]]
        return out

    return conv_rows(conv_rows(np.asarray(pix, dtype=np.float64)).T).T


def local_shuffle(img, grid=10, seed=0):
    """Permute pixels inside each cell of a grid x grid partition.

    Cells are floor-sized with the last row/column absorbing the remainder.
    Blocks are visited in row-major order, each consuming the next draws of
    one seeded stream, so the result is reproducible and the per-block pixel
    multiset is untouched.
    """
    img = check_gray(img)
    h, w = img.shape
    if grid > min(h, w):
        raise ValueError(f"grid {grid} exceeds image dimensions {img.shape}")
    bh, bw = h // grid, w // grid
    rng = rng_from(seed, 0x5F1E)
    out = img.copy()
    for bi in range(grid):
        y0 = bi * bh
        y1 = (bi + 1) * bh if bi < grid - 1 else h
        for bj in range(grid):
            x0 = bj * bw
            x1 = (bj + 1) * bw if bj < grid - 1 else w
            block = out[y0:y1, x0:x1]
            flat = block.ravel()
            out[y0:y1, x0:x1] = flat[rng.permutation(flat.size)].reshape(block.shape)
    return out


def corrupt_image(img, spec, item_seed, mask=None, bank=None):
    """Apply one strategy to one image. Pasting needs a mask and a bank."""
    if spec.strategy == "perlin":
        if bank is None:
            raise EmptyBankError("perlin strategy needs a patch bank")
        if mask is None:
            raise EmptyMaskError("perlin strategy needs a lung mask")
        return paste_patches(img, mask, bank, spec.patches_per_image,
                             seed=item_seed, mode=spec.paste_mode)
    if spec.strategy == "gaussian":
        return gaussian_blur(img, spec.kernel_size, spec.sigma)
    return local_shuffle(img, spec.grid, seed=item_seed)


def generate_dataset(normals, masks, spec, count, out_dir, manifest_path,
                     bank=None, mask_threshold=100):
    """Produce `count` pseudo-diseased images plus a paired-training manifest.

    Item i corrupts normals[i % N] with seed spec.seed + i, so the dataset is
    a pure function of its inputs and any item can be regenerated alone.
    `masks` may be a path list (aligned with normals), or None/"auto" to fall
    back to the threshold heuristic.
    """
    if not normals:
        raise ValueError("no input images")
    os.makedirs(out_dir, exist_ok=True)
    n = len(normals)
    auto_masks = masks is None or masks == "auto"
    if not auto_masks and len(masks) != n:
        raise ValueError("masks list must align with normals")

    entries = []
    cache = {}
    for i in range(count):
        src_path = normals[i % n]
        if src_path not in cache:
            img = load_image(src_path)
            mask = None
            if spec.strategy == "perlin":
                mask = (derive_lung_mask(img, mask_threshold) if auto_masks
                        else load_mask(masks[i % n]))
                if not mask.any():
                    raise EmptyMaskError(f"no lung region found for {src_path}")
            cache[src_path] = (img, mask)
        img, mask = cache[src_path]
        pseudo = corrupt_image(img, spec, spec.seed + i, mask=mask, bank=bank)
        out_path = os.path.join(out_dir, f"pseudo_{i:05d}.png")
        save_image(pseudo, out_path)
        entries.append({"input": out_path, "target": src_path})

    manifest = DatasetManifest(entries=entries, spec=spec, split="train")
    write_manifest(manifest, manifest_path)
    return manifest
