"""Vector quantization of continuous perceptual features into symbols."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.cluster.vq import kmeans2

from ..errors import DimensionMismatch

ITERATIONS = 50


def quantize_features(vectors, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """k-means (k-means++ seeding, 50 iterations) then nearest-centroid labels.

    Returns (symbol ids, codebook). Ties between centroids go to the lowest id.
    """
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError("k must be a positive integer")
    rows = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not rows:
        raise DimensionMismatch("no feature rows")
    width = rows[0].size
    if width == 0:
        raise DimensionMismatch("feature rows are empty")
    for i, r in enumerate(rows):
        if r.size != width:
            raise DimensionMismatch(f"row {i} has width {r.size}, expected {width}")
    data = np.vstack(rows)
    if not np.all(np.isfinite(data)):
        raise DimensionMismatch("feature rows contain non-finite values")
    if k == 1:
        codebook = data.mean(axis=0, keepdims=True)
    else:
        with warnings.catch_warnings():
            # empty clusters are legal here: their centroid just never wins
            warnings.simplefilter("ignore")
            codebook, _ = kmeans2(data, min(k, len(data)), iter=ITERATIONS, minit="++",
                                  seed=np.random.default_rng(seed))
        if len(codebook) < k:
            # fewer rows than symbols: pad with copies that lose every tie
            codebook = np.vstack([codebook, np.repeat(codebook[-1:], k - len(codebook), axis=0)])
    dist = ((data[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(dist, axis=1).astype(np.int64), codebook
