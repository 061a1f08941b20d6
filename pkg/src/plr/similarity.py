"""Patch-set resemblance: mean pairwise cosine distance and JS divergence.

Patches of any size are resized to 32x32 and flattened to 1024-d intensity
vectors. Cosine distance treats them as directions; Jensen-Shannon divergence
treats them as histogram-like masses (epsilon-regularized, normalized to
sum 1, natural log, so the divergence is bounded by ln 2).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ZeroVectorError
from .image import check_gray, resize_bilinear

PATCH_SIDE = 32
VECTOR_DIM = PATCH_SIDE * PATCH_SIDE
_EPS = 1e-12


@dataclass(frozen=True)
class SimilarityReport:
    mean_cosine_distance: float
    mean_js_divergence: float
    pair_count: int
    size_a: int
    size_b: int

    def to_dict(self):
        return {
            "mean_cosine_distance": self.mean_cosine_distance,
            "mean_js_divergence": self.mean_js_divergence,
            "pair_count": self.pair_count,
            "set_sizes": [self.size_a, self.size_b],
        }


def to_vector(patch):
    """Resize to 32x32 and flatten row-major into a 1024-entry f64 vector."""
    patch = check_gray(patch)
    if patch.shape != (PATCH_SIDE, PATCH_SIDE):
        patch = resize_bilinear(patch, PATCH_SIDE, PATCH_SIDE)
    return patch.astype(np.float64).ravel()


def cosine_distance(a, b):
    """1 - cos(a, b); scale-invariant, zero for identical directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine distance undefined for zero vectors")
    return float(1.0 - np.dot(a, b) / (na * nb))


def _normalize(v):
    v = np.asarray(v, dtype=np.float64) + _EPS
    return v / v.sum()


def js_divergence(a, b):
    """Jensen-Shannon divergence of epsilon-regularized normalized vectors.

    JS(p, q) = KL(p||m)/2 + KL(q||m)/2 with m = (p + q)/2, natural log.
    Symmetric, zero on identical inputs, at most ln 2.
    """
    p = _normalize(a)
    q = _normalize(b)
    m = 0.5 * (p + q)
    return float(0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m)))


def set_similarity(pseudo, reference):
    """Average both measures over every (pseudo, reference) pair.

    Accepts lists of patches (2-d uint8 arrays) or ready-made vectors.
    """
    va = _as_vectors(pseudo)
    vb = _as_vectors(reference)
    if not len(va) or not len(vb):
        raise ValueError("both patch sets must be non-empty")

    a = np.stack(va)
    b = np.stack(vb)

    norms_a = np.linalg.norm(a, axis=1)
    norms_b = np.linalg.norm(b, axis=1)
    if (norms_a == 0).any() or (norms_b == 0).any():
        raise ZeroVectorError("cosine distance undefined for zero vectors")
    cos_matrix = 1.0 - (a @ b.T) / np.outer(norms_a, norms_b)

    pa = (a + _EPS) / (a + _EPS).sum(axis=1, keepdims=True)
    pb = (b + _EPS) / (b + _EPS).sum(axis=1, keepdims=True)
    js_matrix = np.empty((len(pa), len(pb)))
    for i, p in enumerate(pa):
        m = 0.5 * (p[None, :] + pb)
        js_matrix[i] = 0.5 * np.sum(p[None, :] * np.log(p[None, :] / m), axis=1) \
            + 0.5 * np.sum(pb * np.log(pb / m), axis=1)

    return SimilarityReport(
        mean_cosine_distance=float(cos_matrix.mean()),
        mean_js_divergence=float(js_matrix.mean()),
        pair_count=int(len(va) * len(vb)),
        size_a=len(va),
        size_b=len(vb),
    )


def _as_vectors(patches):
    out = []
    for p in patches:
        arr = np.asarray(p)
        out.append(to_vector(arr) if arr.ndim == 2 else arr.astype(np.float64))
    return out
