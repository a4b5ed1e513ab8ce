"""Small statistical helpers: batch-means errors and stationarity drift."""

from __future__ import annotations

import numpy as np

N_BATCHES = 32


def batch_means(values: np.ndarray, n_batches: int = N_BATCHES):
    """Mean and batch-means standard error over axis 0 (paths).

    Paths are grouped into ``n_batches`` contiguous batches; the spread of
    batch averages estimates the error of the overall mean without assuming
    independence along the remaining axes.
    """
    n = values.shape[0]
    nb = min(n_batches, n)
    edges = np.linspace(0, n, nb + 1).astype(int)
    bm = np.stack([values[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    mean = values.mean(axis=0)
    se = bm.std(axis=0, ddof=1) / np.sqrt(nb)
    return mean, se


def stationarity_gap(path_values: np.ndarray):
    """Drift diagnostic on per-path series of shape (n_paths, n_records):
    the first-third vs last-third time average is differenced per path (so
    within-path correlation cancels into the statistic), then batch means
    over independent paths give the standard error.

    Returns (gap, se); callers compare gap against 3*se.
    """
    n_rec = path_values.shape[1]
    k = max(1, n_rec // 3)
    per_path = path_values[:, :k].mean(axis=1) - path_values[:, -k:].mean(axis=1)
    mean, se = batch_means(per_path)
    return abs(float(mean)), float(se)
