"""Synthetic open-world detection worlds: prototypes, task splits and scenes.

A world places category prototypes at random directions of a semantic
subspace, scatters class prototypes around them, and assigns classes to tasks
according to the split mode. The last feature coordinate is an objectness
level: objects sit at ``objectness``, background at ``background_objectness``
(the opposite side by default, where a linear no-object head pushes it). Scenes hold objects
(one matched query each), near-miss duplicate queries and structureless
background queries.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from .memory import CategoryMap

WORLD_SCHEMA = "hypow.world/1"
SPLIT_MODES = ("low", "medium", "high")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    num_categories: int = 4
    classes_per_category: int = 2
    feature_dim: int = 16
    category_radius: float = 3.0
    category_spread: float = 3.0
    class_spread: float = 1.2
    noise_sigma: float = 0.4
    objectness: float = 3.0
    background_radius: float = 3.0
    background_objectness: float = -3.0
    num_tasks: int = 2
    split_mode: str = "high"
    known_per_scene: int = 3
    unknown_per_scene: int = 2
    background_per_scene: int = 6
    duplicate_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 2:
            raise ConfigError("num_tasks must be >= 2")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError(f"split_mode must be one of {SPLIT_MODES}")
        if self.num_categories < 1 or self.classes_per_category < 1 or self.feature_dim < 2:
            raise ConfigError("category, class and feature counts must be positive")
        if min(self.class_spread, self.noise_sigma, self.category_spread) < 0:
            raise ConfigError("spreads and noise must be >= 0")
        if not 0 <= self.duplicate_rate <= 1:
            raise ConfigError("duplicate_rate must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        return self.num_categories * self.classes_per_category


@dataclass
class TaskSchedule:
    """Classes introduced by each task; ``known(t)`` is cumulative."""

    new_classes: list[list[int]]

    @property
    def num_tasks(self) -> int:
        return len(self.new_classes)

    def new(self, t: int) -> list[int]:
        return sorted(self.new_classes[t - 1])

    def known(self, t: int) -> list[int]:
        return sorted(k for g in self.new_classes[:t] for k in g)

    def previous(self, t: int) -> list[int]:
        return self.known(t - 1) if t > 1 else []

    def unknown(self, t: int) -> list[int]:
        return sorted(k for g in self.new_classes[t:] for k in g)


@dataclass
class World:
    config: WorldConfig
    category_prototypes: np.ndarray
    class_prototypes: np.ndarray
    categories: CategoryMap
    schedule: TaskSchedule

    @property
    def num_classes(self) -> int:
        return len(self.class_prototypes)

    @property
    def semantic_prototypes(self) -> np.ndarray:
        return self.class_prototypes[:, :-1]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "category_prototypes": self.category_prototypes.tolist(),
            "class_prototypes": self.class_prototypes.tolist(),
            "categories": self.categories.to_dict(),
            "tasks": [sorted(g) for g in self.schedule.new_classes],
        }

    @classmethod
    def from_dict(cls, d) -> "World":
        return cls(
            WorldConfig(**d["config"]),
            np.asarray(d["category_prototypes"], float),
            np.asarray(d["class_prototypes"], float),
            CategoryMap({int(k): int(v) for k, v in d["categories"].items()}),
            TaskSchedule([list(g) for g in d["tasks"]]),
        )


# label hygiene audit: records class ids read from scene objects while active
_audit_log: list[int] | None = None


@contextlib.contextmanager
def audit_label_access() -> Iterator[list[int]]:
    """Collect every ground-truth class id read from a :class:`SceneObject`."""
    global _audit_log
    prev, _audit_log = _audit_log, []
    try:
        yield _audit_log
    finally:
        _audit_log = prev


@contextlib.contextmanager
def unaudited() -> Iterator[None]:
    """Suspend auditing for the scorer, which is entitled to every ground-truth label."""
    global _audit_log
    prev, _audit_log = _audit_log, None
    try:
        yield
    finally:
        _audit_log = prev


@dataclass
class SceneObject:
    _class_id: int
    box: tuple[float, float, float, float]
    feature: np.ndarray
    query_box: tuple[float, float, float, float]
    annotated: bool

    @property
    def class_id(self) -> int:
        if _audit_log is not None:
            _audit_log.append(self._class_id)
        return self._class_id


@dataclass
class SceneRecord:
    scene_id: int
    task: int
    objects: list[SceneObject]
    duplicates: list[tuple[np.ndarray, tuple]] = field(default_factory=list)
    background: list[tuple[np.ndarray, tuple]] = field(default_factory=list)

    def annotated_classes(self) -> list[int]:
        return sorted({o.class_id for o in self.objects if o.annotated})

    def queries(self) -> tuple[np.ndarray, list[tuple]]:
        """Query features and boxes: objects, then duplicates, then background."""
        feats = [o.feature for o in self.objects] + [f for f, _ in self.duplicates] + [f for f, _ in self.background]
        boxes = [o.query_box for o in self.objects] + [b for _, b in self.duplicates] + [b for _, b in self.background]
        return np.stack(feats), boxes

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "task": self.task,
            "objects": [
                {"class_id": o._class_id, "box": list(o.box), "feature": o.feature.tolist(),
                 "query_box": list(o.query_box), "annotated": o.annotated}
                for o in self.objects
            ],
            "duplicates": [{"feature": f.tolist(), "box": list(b)} for f, b in self.duplicates],
            "background": [{"feature": f.tolist(), "box": list(b)} for f, b in self.background],
        }

    @classmethod
    def from_dict(cls, d) -> "SceneRecord":
        objs = [SceneObject(o["class_id"], tuple(o["box"]), np.asarray(o["feature"], float),
                            tuple(o["query_box"]), o["annotated"]) for o in d["objects"]]
        dup = [(np.asarray(q["feature"], float), tuple(q["box"])) for q in d["duplicates"]]
        bg = [(np.asarray(q["feature"], float), tuple(q["box"])) for q in d["background"]]
        return cls(d["scene_id"], d["task"], objs, dup, bg)


@dataclass
class TrainingScene:
    """What the learner sees: query features and boxes, labels only for annotated objects (-1 otherwise)."""

    scene_id: int
    features: np.ndarray
    boxes: list[tuple]
    labels: np.ndarray


def _separated_directions(rng, n, dim, radius, spread, tries=2000):
    if n > 1 and spread > 2 * radius:
        raise ConfigError(f"category_spread {spread} exceeds the prototype sphere diameter {2 * radius}")
    pts: list[np.ndarray] = []
    for _ in range(tries * max(n, 1)):
        v = rng.normal(size=dim)
        v *= radius / np.linalg.norm(v)
        if all(np.linalg.norm(v - p) >= spread for p in pts):
            pts.append(v)
            if len(pts) == n:
                return np.stack(pts)
    raise ConfigError(f"cannot place {n} category prototypes {spread} apart on a radius-{radius} sphere in {dim}-d")


def _assign_tasks(cfg: WorldConfig, rng) -> list[list[int]]:
    P, C, T = cfg.num_categories, cfg.classes_per_category, cfg.num_tasks
    members = [[p * C + j for j in rng.permutation(C)] for p in range(P)]
    tasks: list[list[int]] = [[] for _ in range(T)]

    def spread(cats):
        if C < T:
            raise ConfigError(f"split needs classes_per_category >= num_tasks ({C} < {T})")
        for p in cats:
            for j, k in enumerate(members[p]):
                tasks[j % T].append(int(k))

    def exclusive(cats):
        for i, p in enumerate(cats):
            tasks[i % T].extend(int(k) for k in members[p])

    order = [int(p) for p in rng.permutation(P)]
    if cfg.split_mode == "high":
        spread(order)
    elif cfg.split_mode == "low":
        if P < T:
            raise ConfigError(f"low split needs num_categories >= num_tasks ({P} < {T})")
        exclusive(order)
    else:
        half = P // 2
        if half < T and P - half < T:
            raise ConfigError("medium split needs enough categories to share and to separate")
        spread(order[:half])
        exclusive(order[half:])
    if any(not g for g in tasks):
        raise ConfigError("some task received no classes")
    return [sorted(g) for g in tasks]


def gen_world(cfg: WorldConfig, rng: np.random.Generator | None = None) -> World:
    """Deterministic world for ``cfg.seed`` (or the supplied generator)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    S = cfg.feature_dim - 1
    cats = _separated_directions(rng, cfg.num_categories, S, cfg.category_radius, cfg.category_spread)
    offsets = rng.normal(scale=cfg.class_spread / np.sqrt(S), size=(cfg.num_classes, S))
    protos = np.repeat(cats, cfg.classes_per_category, axis=0) + offsets
    protos = np.hstack([protos, np.full((cfg.num_classes, 1), cfg.objectness)])
    cmap = CategoryMap({k: k // cfg.classes_per_category for k in range(cfg.num_classes)})
    return World(cfg, cats, protos, cmap, TaskSchedule(_assign_tasks(cfg, rng)))


def _rand_box(rng, lo=0.1, hi=0.3):
    w, h = rng.uniform(lo, hi, size=2)
    x, y = rng.uniform(0, 1 - w), rng.uniform(0, 1 - h)
    return (float(x), float(y), float(x + w), float(y + h))


def _jitter(box, rng, frac):
    w, h = box[2] - box[0], box[3] - box[1]
    dx, dy = rng.uniform(-frac, frac, size=2) * (w, h)
    x1, y1 = min(max(box[0] + dx, 0.0), 1 - w), min(max(box[1] + dy, 0.0), 1 - h)
    return (float(x1), float(y1), float(x1 + w), float(y1 + h))


def _near_miss(box, rng):
    # shifted by 60-90% of the size: overlaps the object but below IoU 0.5
    w, h = box[2] - box[0], box[3] - box[1]
    sx, sy = rng.choice([-1, 1], size=2)
    shift = rng.uniform(0.6, 0.9)
    ax = rng.uniform(0, 1)
    dx, dy = sx * shift * w * ax, sy * shift * h * (1 - ax)
    x1, y1 = min(max(box[0] + dx, 0.0), 1 - w), min(max(box[1] + dy, 0.0), 1 - h)
    return (float(x1), float(y1), float(x1 + w), float(y1 + h))


def background_feature(world: World, rng) -> np.ndarray:
    """Isotropic semantic part; objectness at the background level up to noise."""
    cfg = world.config
    S = cfg.feature_dim - 1
    sem = rng.normal(scale=cfg.background_radius / np.sqrt(S), size=S)
    obj = cfg.background_objectness + rng.normal(scale=cfg.noise_sigma / np.sqrt(cfg.feature_dim))
    return np.append(sem, obj)


def gen_scene(
    world: World,
    task_index: int,
    rng: np.random.Generator,
    scene_id: int = 0,
    known_classes: Sequence[int] | None = None,
    unknown_rate: float | None = None,
) -> SceneRecord:
    """One scene of task ``task_index`` (1-based).

    Known objects come from ``known_classes`` (default: every class known at
    that task) and are annotated; unknown objects come from the task's unknown
    set and are not. ``unknown_rate`` overrides the mean unknown count.
    """
    cfg = world.config
    known = list(known_classes) if known_classes is not None else world.schedule.known(task_index)
    unknown = world.schedule.unknown(task_index)
    revealed = set(world.schedule.known(task_index))
    sig = cfg.noise_sigma / np.sqrt(cfg.feature_dim)
    n_known = int(rng.poisson(cfg.known_per_scene)) if known else 0
    lam_u = cfg.unknown_per_scene if unknown_rate is None else unknown_rate
    n_unk = int(rng.poisson(lam_u)) if unknown and lam_u > 0 else 0
    classes = [int(k) for k in rng.choice(known, size=n_known)] if n_known else []
    classes += [int(k) for k in rng.choice(unknown, size=n_unk)] if n_unk else []
    objects, dups = [], []
    for k in classes:
        feat = world.class_prototypes[k] + rng.normal(scale=sig, size=cfg.feature_dim)
        box = _rand_box(rng)
        objects.append(SceneObject(k, box, feat, _jitter(box, rng, 0.05), k in revealed))
        if rng.uniform() < cfg.duplicate_rate:
            lam = rng.uniform(0.3, 0.7)
            dups.append((lam * feat + (1 - lam) * background_feature(world, rng), _near_miss(box, rng)))
    bg = [(background_feature(world, rng), _rand_box(rng, 0.05, 0.4)) for _ in range(cfg.background_per_scene)]
    return SceneRecord(scene_id, task_index, objects, dups, bg)


def annotate(scene: SceneRecord, active_labels: Sequence[int]) -> TrainingScene:
    """Oracle view for training: annotated objects of active classes keep labels, everything else is unmatched."""
    active = set(active_labels)
    feats, boxes = scene.queries()
    labels = np.full(len(feats), -1, dtype=int)
    for i, o in enumerate(scene.objects):
        if o.annotated:
            k = o.class_id
            if k in active:
                labels[i] = k
    return TrainingScene(scene.scene_id, feats, boxes, labels)


def prototype_overlap(world: World, t: int) -> float:
    """Known/unknown semantic overlap of task ``t`` measured on class prototypes."""
    from .splitsim import overlap

    sched = world.schedule
    sem = world.semantic_prototypes
    return overlap(sem[sched.known(t)], sem[sched.unknown(t)])


def dump_world(world: World, scenes: Sequence[SceneRecord], seed: int) -> str:
    doc = {
        "schema": WORLD_SCHEMA,
        "version": __version__,
        "seed": seed,
        "world": world.to_dict(),
        "scenes": [s.to_dict() for s in scenes],
    }
    return json.dumps(doc, sort_keys=True)


def load_world(text: str) -> tuple[World, list[SceneRecord]]:
    doc = json.loads(text)
    if doc.get("schema") != WORLD_SCHEMA:
        raise ConfigError(f"expected schema {WORLD_SCHEMA}, got {doc.get('schema')}")
    return World.from_dict(doc["world"]), [SceneRecord.from_dict(s) for s in doc["scenes"]]


def reveal(scene: SceneRecord, known: Sequence[int]) -> SceneRecord:
    """Oracle step at a task boundary: a copy with objects of ``known`` classes annotated."""
    known = set(known)
    objs = [SceneObject(o._class_id, o.box, o.feature, o.query_box, o._class_id in known) for o in scene.objects]
    return SceneRecord(scene.scene_id, scene.task, objs, scene.duplicates, scene.background)
