"""Numeric primitives and embedding-space geometry shared by all modules.

Embeddings are plain float64 numpy arrays. The helpers here are the only
places that decide what counts as a zero vector and how cosine values are
clamped, so every downstream consumer (loss heads, verification scoring)
inherits one consistent convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroVector

# Below this norm a vector carries no usable direction at float64 precision.
ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Sample:
    """One toy face: a feature vector tied to an identity.

    label_index is the dense class index of the identity within the training
    manifest the sample came from; -1 when the sample is not part of a
    classification manifest (e.g. evaluation-only samples).
    """

    sample_id: str
    identity_id: str
    feature: np.ndarray
    label_index: int = -1


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, raising on NaN/Inf."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ZeroVector(f"{name} contains non-finite components")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale v to unit Euclidean norm, preserving direction.

    Raises ZeroVector when the norm is at or below ZERO_NORM_EPS.
    """
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm <= ZERO_NORM_EPS:
        raise ZeroVector(f"cannot normalize vector with norm {norm!r}")
    # Accumulate in extended precision so renormalizing an already unit
    # vector moves each component by at most one ulp.
    ext = arr.astype(np.longdouble)
    return np.asarray(ext / np.sqrt(np.sum(ext * ext)), dtype=np.float64)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between a and b, clamped into [-1, 1].

    The clamp guards downstream arccos against rounding overshoot like
    1 + 2**-52 on identical directions.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na <= ZERO_NORM_EPS or nb <= ZERO_NORM_EPS:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    cos = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, cos))
