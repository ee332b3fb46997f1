"""Semantic overlap between known and unknown class names across a task split."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

REGIME_THRESHOLDS = (0.45, 0.6)  # mean overlap below the first is "low", at or above the second "high"


class EmbeddingParseError(ValueError):
    pass


class TokenLookupError(KeyError):
    def __str__(self) -> str:
        return f"no embedding for token {self.args[0]!r}"


class UndefinedOverlap(ValueError):
    """Overlap requested for a task without unknown classes."""


class WordEmbeddingTable:
    def __init__(self, vectors: Mapping[str, np.ndarray] | None = None):
        self.vectors: dict[str, np.ndarray] = dict(vectors or {})
        dims = {v.shape[0] for v in self.vectors.values()}
        if len(dims) > 1:
            raise EmbeddingParseError(f"mixed embedding dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, name: str) -> np.ndarray:
        """Vector of a class name; multi-word names average their token vectors."""
        tokens = name.split()
        if not tokens:
            raise TokenLookupError(name)
        for t in tokens:
            if t not in self.vectors:
                raise TokenLookupError(t)
        vec = np.mean([self.vectors[t] for t in tokens], axis=0)
        if not np.linalg.norm(vec) > 0:
            raise TokenLookupError(name)
        return vec


def load_embeddings(path) -> WordEmbeddingTable:
    """Parse ``token v1 ... vd`` lines; a repeated token keeps its last vector."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        token, raw = parts[0], parts[1:]
        try:
            vec = np.array([float(x) for x in raw], dtype=np.float64)
        except ValueError:
            raise EmbeddingParseError(f"{path}:{lineno}: non-numeric component") from None
        if vec.size == 0 or not np.all(np.isfinite(vec)):
            raise EmbeddingParseError(f"{path}:{lineno}: expected finite components after the token")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise EmbeddingParseError(f"{path}:{lineno}: dimension {vec.size}, expected {dim}")
        if token in vectors:
            log.warning("%s:%d: duplicate token %r, keeping the last occurrence", path, lineno, token)
        vectors[token] = vec
    return WordEmbeddingTable(vectors)


@dataclass(frozen=True)
class SplitDefinition:
    """Class names introduced by each task; task ``t`` knows the first ``t`` groups."""

    tasks: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        names = [n for group in self.tasks for n in group]
        if len(names) != len(set(names)):
            raise ValueError("class names must be unique across the split")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def known(self, t: int) -> list[str]:
        return [n for group in self.tasks[:t] for n in group]

    def unknown(self, t: int) -> list[str]:
        return [n for group in self.tasks[t:] for n in group]

    @classmethod
    def from_json(cls, path) -> "SplitDefinition":
        data = json.loads(Path(path).read_text())
        return cls(tuple(tuple(g) for g in data["tasks"]))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def overlap(known_vecs: np.ndarray, unknown_vecs: np.ndarray) -> float:
    """Mean over unknowns of the best cosine similarity to any known vector."""
    if len(unknown_vecs) == 0:
        raise UndefinedOverlap("no unknown classes")
    if len(known_vecs) == 0:
        raise UndefinedOverlap("no known classes")
    cos = _unit(np.asarray(unknown_vecs, float)) @ _unit(np.asarray(known_vecs, float)).T
    return float(np.clip(cos, -1.0, 1.0).max(axis=1).mean())


def semantic_overlap(split: SplitDefinition, table: WordEmbeddingTable, t: int) -> float:
    if not 1 <= t <= split.num_tasks - 1:
        raise UndefinedOverlap(f"task {t} outside 1..{split.num_tasks - 1}")
    unknown = split.unknown(t)
    if not unknown:
        raise UndefinedOverlap(f"task {t} has no unknown classes")
    K = np.stack([table.lookup(n) for n in split.known(t)])
    U = np.stack([table.lookup(n) for n in unknown])
    return overlap(K, U)


def regime_label(mean_overlap: float, thresholds: Sequence[float] = REGIME_THRESHOLDS) -> str:
    lo, hi = thresholds
    if mean_overlap < lo:
        return "low"
    return "medium" if mean_overlap < hi else "high"


def regime_report(split: SplitDefinition, table: WordEmbeddingTable, thresholds: Sequence[float] = REGIME_THRESHOLDS) -> dict:
    values = [semantic_overlap(split, table, t) for t in range(1, split.num_tasks)]
    mean = float(np.mean(values)) if values else None
    return {
        "overlap": values,
        "mean_overlap": mean,
        "regime": regime_label(mean, thresholds) if mean is not None else None,
        "thresholds": list(thresholds),
    }


def compare_regimes(reports: Mapping[str, dict]) -> bool:
    """True when the provided low/medium/high reports have strictly increasing mean overlap."""
    order = [r for r in ("low", "medium", "high") if r in reports]
    means = [reports[r]["mean_overlap"] for r in order]
    return all(a < b for a, b in zip(means, means[1:]))


def format_table(report: dict) -> str:
    rows = [f"{'task':>4}  {'S_t':>8}"]
    rows += [f"{t:>4}  {v:8.4f}" for t, v in enumerate(report["overlap"], 1)]
    rows.append(f"mean overlap {report['mean_overlap']:.4f} -> regime {report['regime']}")
    return "\n".join(rows)
