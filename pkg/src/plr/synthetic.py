"""Procedural stand-ins for chest CT slices, used by the desk-scale tests
and the demo pipeline. Not medical data: a bright elliptical body on a dark
background with two dark lung cavities and a little texture, so the
threshold-based lung mask heuristic finds sensible regions.
"""

import numpy as np

from .perlin import OctaveParams, build_table, octave_noise
from .util import quantize_u8, rng_from


def make_normal_image(size, seed):
    """One synthetic 'normal' slice of shape (size, size)."""
    rng = rng_from(seed, 0x7E57)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0

    out = np.full((size, size), 30.0)

    body_rx = 0.46 * size * rng.uniform(0.95, 1.05)
    body_ry = 0.42 * size * rng.uniform(0.95, 1.05)
    body = ((xs - cx) / body_rx) ** 2 + ((ys - cy) / body_ry) ** 2 <= 1.0
    out[body] = 170.0 + 10.0 * ((ys[body] - cy) / size)

    table = build_table(int(rng.integers(1 << 31)))
    texture = octave_noise(table, xs, ys, OctaveParams(
        octaves=3, base_frequency=3.0 / size, persistence=0.5))

    for side in (-1.0, 1.0):
        lx = cx + side * 0.21 * size * rng.uniform(0.9, 1.1)
        ly = cy + 0.02 * size * rng.uniform(-1.0, 1.0)
        rx = 0.14 * size * rng.uniform(0.9, 1.1)
        ry = 0.27 * size * rng.uniform(0.9, 1.1)
        lung = ((xs - lx) / rx) ** 2 + ((ys - ly) / ry) ** 2 <= 1.0
        out[lung] = 60.0 + 14.0 * texture[lung]

    return quantize_u8(out)


def make_normals(count, size, seed):
    return [make_normal_image(size, seed + i) for i in range(count)]


def make_square_task(count, size, seed):
    """Balanced binary task: plain synthetic slices vs ones carrying a single
    bright square inside a lung. Returns (images, labels)."""
    images = []
    labels = []
    for i in range(count):
        img = make_normal_image(size, seed + 1000 + i)
        label = i % 2
        if label:
            rng = rng_from(seed, 0x59A2, i)
            side = int(size // 5 + rng.integers(-size // 16, size // 16 + 1))
            cx = size // 2 + int(rng.choice([-1, 1]) * 0.21 * size)
            cy = size // 2 + int(rng.integers(-size // 10, size // 10 + 1))
            half = side // 2
            y0, y1 = max(cy - half, 0), min(cy + half + 1, size)
            x0, x1 = max(cx - half, 0), min(cx + half + 1, size)
            value = np.uint8(int(rng.integers(195, 236)))
            img = img.copy()
            img[y0:y1, x0:x1] = value
        images.append(img)
        labels.append(label)
    return images, np.array(labels)
