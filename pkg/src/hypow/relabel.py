"""Adaptive relabeling of unmatched queries as unknowns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import hyp_ave, pairwise_dist
from .memory import ReplayBuffer

RELABEL_MODES = ("adaptive", "all-unmatched", "off")


@dataclass(frozen=True)
class CentroidSet:
    class_ids: tuple[int, ...]
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.class_ids)

    def as_dict(self) -> dict[int, np.ndarray]:
        return dict(zip(self.class_ids, self.points))


@dataclass
class RelabelDecision:
    threshold_delta_B: float | None
    relabeled: set[int] = field(default_factory=set)
    skipped: bool = False


def class_centroids(buffer: ReplayBuffer, c: float) -> CentroidSet:
    """Hyperbolic average of each buffered class; empty classes are absent."""
    ids = tuple(buffer.classes())
    d = buffer.entries(ids[0]).shape[1] if ids else 0
    pts = np.stack([hyp_ave(buffer.entries(k), c) for k in ids]) if ids else np.zeros((0, d))
    return CentroidSet(ids, pts)


def batch_threshold(matched, centroids: CentroidSet, c: float) -> float | None:
    """Largest distance from any matched embedding to any class centroid.

    ``None`` when either side is empty.
    """
    M = np.asarray(matched, dtype=np.float64)
    if M.size == 0 or len(centroids) == 0:
        return None
    return float(pairwise_dist(np.atleast_2d(M), centroids.points, c).max())


def min_centroid_dist(points, centroids: CentroidSet, c: float) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return pairwise_dist(P, centroids.points, c).min(axis=1)


def relabel_unmatched(unmatched, centroids: CentroidSet, delta_B: float, c: float) -> set[int]:
    """Indices of unmatched points whose nearest centroid lies within ``delta_B`` (inclusive)."""
    if delta_B < 0:
        raise ValueError("delta_B must be >= 0")
    U = np.asarray(unmatched, dtype=np.float64)
    if U.size == 0 or len(centroids) == 0:
        return set()
    near = min_centroid_dist(U, centroids, c)
    return {int(i) for i in np.flatnonzero(near <= delta_B)}


def relabel(matched, unmatched, centroids: CentroidSet, c: float, mode: str = "adaptive") -> RelabelDecision:
    """One relabeling step under ``mode`` (see ``RELABEL_MODES``)."""
    n_unmatched = len(np.atleast_2d(unmatched)) if np.size(unmatched) else 0
    if mode == "off":
        return RelabelDecision(None, set(), skipped=True)
    if mode == "all-unmatched":
        return RelabelDecision(None, set(range(n_unmatched)))
    if mode != "adaptive":
        raise ValueError(f"unknown relabel mode {mode!r}")
    delta = batch_threshold(matched, centroids, c)
    if delta is None:
        return RelabelDecision(None, set(), skipped=True)
    return RelabelDecision(delta, relabel_unmatched(unmatched, centroids, delta, c))
