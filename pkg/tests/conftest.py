import json
import os

import numpy as np
import pytest

from plr.corrupt import CorruptionSpec, generate_dataset
from plr.image import save_image
from plr.manifest import read_manifest
from plr.patches import build_bank
from plr.perlin import render_noise_image
from plr.synthetic import make_normals, make_square_task


@pytest.fixture(scope="session")
def small_bank():
    noise = [render_noise_image(s, 512) for s in range(8)]
    return build_bank(noise, 60, threshold=180, size_range=(5, 15), seed=11)


@pytest.fixture(scope="session")
def normals_32(tmp_path_factory):
    """16 synthetic 32x32 normal images on disk."""
    root = tmp_path_factory.mktemp("normals32")
    paths = []
    for i, img in enumerate(make_normals(16, 32, seed=40)):
        p = root / f"n{i:03d}.png"
        save_image(img, p)
        paths.append(str(p))
    return paths


@pytest.fixture(scope="session")
def restore_manifest_32(tmp_path_factory, normals_32, small_bank):
    """Tiny perlin-corruption restoration manifest at 32x32."""
    root = tmp_path_factory.mktemp("restore32")
    spec = CorruptionSpec(strategy="perlin", patches_per_image=8, seed=21)
    manifest_path = root / "restore.jsonl"
    generate_dataset(normals_32, "auto", spec, 16, root / "out", manifest_path,
                     bank=small_bank)
    return read_manifest(manifest_path)


def write_classification_manifest(entries, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            rel = os.path.relpath(e["input"], base)
            fh.write(json.dumps({"input": rel, "label": int(e["label"])}) + "\n")


@pytest.fixture(scope="session")
def square_task_32(tmp_path_factory):
    """Bright-square classification task at 32x32: train/val/test manifests."""
    root = tmp_path_factory.mktemp("square32")
    imgs, labels = make_square_task(120, 32, seed=50)
    entries = []
    for i, (img, lab) in enumerate(zip(imgs, labels)):
        p = root / f"s{i:03d}.png"
        save_image(img, p)
        entries.append({"input": str(p), "label": int(lab)})
    paths = {}
    for split, chunk in [("train", entries[:80]), ("val", entries[80:100]),
                         ("test", entries[100:])]:
        path = root / f"{split}.jsonl"
        write_classification_manifest(chunk, path)
        paths[split] = str(path)
    return {split: read_manifest(p, split=split) for split, p in paths.items()}, paths
