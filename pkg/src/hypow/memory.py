"""Embedding replay buffer, category map and end-of-task exemplar store."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class AbsentClassError(LookupError):
    """Requested class has no stored entries."""


class ReplayBuffer:
    """Per-class ring store of ball points, at most ``capacity`` per class.

    Entries are copied on push; once a class is full the oldest entry is evicted.
    """

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._store: dict[int, deque] = {}
        self.pushed: dict[int, int] = {}

    def push(self, class_id: int, point) -> "ReplayBuffer":
        class_id = int(class_id)
        ring = self._store.setdefault(class_id, deque(maxlen=self.capacity))
        ring.append(np.array(point, dtype=np.float64, copy=True))
        self.pushed[class_id] = self.pushed.get(class_id, 0) + 1
        return self

    def push_many(self, class_ids: Iterable[int], points) -> "ReplayBuffer":
        for cid, p in zip(class_ids, points):
            self.push(cid, p)
        return self

    def classes(self) -> list[int]:
        return sorted(k for k, v in self._store.items() if len(v))

    def entries(self, class_id: int) -> np.ndarray:
        """Stored points of one class as an ``(n, d)`` copy, oldest first."""
        ring = self._store.get(int(class_id))
        if not ring:
            raise AbsentClassError(f"class {class_id} has no buffered embeddings")
        return np.stack(list(ring))

    def size(self, class_id: int) -> int:
        return len(self._store.get(int(class_id), ()))

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def all_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored points and their class ids, in sorted class order."""
        classes = self.classes()
        if not classes:
            return np.zeros((0, 0)), np.zeros(0, dtype=int)
        pts = [self.entries(k) for k in classes]
        ids = np.concatenate([np.full(len(p), k) for k, p in zip(classes, pts)])
        return np.concatenate(pts), ids

    def sample_positive(self, class_id: int, k: int, rng: np.random.Generator, exclude: int | None = None):
        """Draw ``k`` stored points of ``class_id`` uniformly.

        Without replacement when ``k`` does not exceed the number of candidates.
        ``exclude`` drops one stored index (an anchor drawn from the buffer itself).
        """
        pts = self.entries(class_id)
        idx = np.arange(len(pts))
        if exclude is not None:
            idx = idx[idx != exclude]
        if len(idx) == 0:
            raise AbsentClassError(f"class {class_id} has no candidate positives")
        chosen = rng.choice(idx, size=k, replace=k > len(idx))
        return pts[chosen]

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "classes": {str(k): [p.tolist() for p in self._store[k]] for k in self.classes()},
            "pushed": {str(k): v for k, v in sorted(self.pushed.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ReplayBuffer":
        buf = cls(data["capacity"])
        for k, pts in data["classes"].items():
            for p in pts:
                buf.push(int(k), p)
        buf.pushed = {int(k): int(v) for k, v in data.get("pushed", {}).items()}
        return buf


@dataclass(frozen=True)
class CategoryMap:
    """Total map from class id to category (superclass) id."""

    class_to_category: Mapping[int, int]

    def __post_init__(self):
        if not self.class_to_category:
            raise ValueError("category map is empty")

    def category(self, class_id: int) -> int:
        return self.class_to_category[int(class_id)]

    def categories(self) -> list[int]:
        return sorted(set(self.class_to_category.values()))

    def members(self, category: int) -> list[int]:
        return sorted(k for k, p in self.class_to_category.items() if p == category)

    def to_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.class_to_category.items())}


@dataclass
class ExemplarStore:
    """Scenes kept at task boundaries, at most ``per_class`` per class."""

    per_class: int
    scenes: dict[int, list] = field(default_factory=dict)

    def all_scenes(self) -> list:
        seen, out = set(), []
        for k in sorted(self.scenes):
            for s in self.scenes[k]:
                if id(s) not in seen:
                    seen.add(id(s))
                    out.append(s)
        return out


def snapshot_exemplars(
    store: ExemplarStore | None,
    scenes: Sequence,
    K: int,
    rng: np.random.Generator,
    class_of=None,
) -> ExemplarStore:
    """Merge up to ``K`` uniformly chosen scenes per annotated class into ``store``.

    ``class_of(scene)`` yields the annotated class ids of a scene; by default the
    scene's ``annotated_classes()`` method is used.
    """
    out = ExemplarStore(per_class=K, scenes={k: list(v) for k, v in (store.scenes if store else {}).items()})
    if K <= 0:
        return ExemplarStore(per_class=0)
    class_of = class_of or (lambda s: s.annotated_classes())
    by_class: dict[int, list] = {}
    for s in scenes:
        for k in sorted(set(class_of(s))):
            by_class.setdefault(k, []).append(s)
    for k in sorted(by_class):
        pool = by_class[k]
        take = min(K, len(pool))
        idx = sorted(rng.choice(len(pool), size=take, replace=False).tolist())
        out.scenes[k] = [pool[i] for i in idx]
    return out
