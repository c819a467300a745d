"""Cell-capacity samples from transmitted-packet records.

Each transmitted packet contributes its per-RB bit capacity once per RB it
used; the flat concatenation is then cut into non-overlapping runs of
``n + n_min`` RBs, and each run's sum is one sample of the bits servable in a
TTI with that many RBs.
"""
from __future__ import annotations

import numpy as np

from .errors import InsufficientSamples
from .snc import ServiceSampleSet


def per_packet_rb_vector(size_bits: int, rbs_used: int) -> np.ndarray:
    """``rbs_used`` copies of floor(size_bits / rbs_used), clamped to >= 1."""
    if size_bits < 1 or rbs_used < 1:
        raise ValueError("size_bits and rbs_used must be >= 1")
    return np.full(rbs_used, max(1, size_bits // rbs_used), dtype=np.int64)


def concat_samples(packets) -> np.ndarray:
    """Concatenate per-packet RB vectors in transmission order.

    ``packets`` is a sequence of (size_bits, rbs_used) pairs or a (J, 2) array.
    """
    arr = np.asarray(packets, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(arr < 1):
        raise ValueError("size_bits and rbs_used must be >= 1")
    per_rb = np.maximum(arr[:, 0] // arr[:, 1], 1)
    return np.repeat(per_rb, arr[:, 1])


def group_sums(x_con: np.ndarray, n_set: int) -> np.ndarray:
    t = len(x_con) // n_set
    return x_con[: t * n_set].reshape(t, n_set).sum(axis=1)


def build_capacity_samples(x_con, n_min: int, n_cell_rb: int) -> list[np.ndarray]:
    """Sample vectors x_{C,n} for n = 0..n_cell_rb - n_min.

    Raises InsufficientSamples for the first n whose group size exceeds the
    number of available per-RB samples.
    """
    if n_min < 1 or n_cell_rb < n_min:
        raise ValueError(f"need 1 <= n_min <= n_cell_rb, got n_min={n_min}, n_cell_rb={n_cell_rb}")
    x_con = np.asarray(x_con, dtype=np.int64)
    out = []
    for n in range(n_cell_rb - n_min + 1):
        if len(x_con) < n + n_min:
            raise InsufficientSamples(n)
        out.append(group_sums(x_con, n + n_min))
    return out


def truncated_sample_set(x_con, n_min: int, pi) -> ServiceSampleSet:
    """ServiceSampleSet for a given pi, truncating regions without samples.

    Regions n whose group size ``n + n_min`` exceeds ``len(x_con)`` are cut
    off and pi is renormalized over the remaining support. If the kept
    regions carry no mass at all, it all goes to the last kept region.
    Regions with zero probability get no samples computed.
    """
    x_con = np.asarray(x_con, dtype=np.int64)
    pi = np.asarray(pi, dtype=float)
    n_keep = min(len(pi), len(x_con) - n_min + 1)
    if n_keep < 1:
        raise InsufficientSamples(0)
    kept = pi[:n_keep].copy()
    if kept.sum() > 0:
        kept = kept / kept.sum()
    else:
        kept[-1] = 1.0
    sets = tuple(
        group_sums(x_con, n + n_min) if kept[n] > 0 else np.zeros(0, dtype=np.int64) for n in range(n_keep)
    )
    return ServiceSampleSet(sets, kept)
