"""Incremental open-world training/evaluation protocol and ablation harness."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .embedder import (
    EmbedderParams,
    Phase,
    TrainingDivergence,
    backward,
    default_schedule,
    forward,
    sgd_step,
)
from .losses import LossConfig, classification_loss, hyp_contrastive_loss, superclass_reg_loss, total_loss
from .memory import ExemplarStore, ReplayBuffer, snapshot_exemplars
from .metrics import UNKNOWN, Detection, GroundTruth, MetricsReport, evaluate
from .relabel import RELABEL_MODES, CentroidSet, class_centroids, min_centroid_dist, relabel
from .world import (
    SceneRecord,
    TrainingScene,
    World,
    WorldConfig,
    annotate,
    gen_scene,
    gen_world,
    reveal,
    unaudited,
)

log = logging.getLogger(__name__)

MASKED = -1e9


@dataclass(frozen=True)
class MethodConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    relabel: str = "adaptive"
    relabel_scope: str = "batch"  # "batch" or "image"
    eval_gate: bool = True
    embed_dim: int = 16
    batch_size: int = 2
    base_lr: float = 0.1
    epoch_scale: float = 0.1
    grad_clip: float = 0.0  # 0 disables norm clipping
    anchor_reduction: str = "mean"  # "mean" divides the anchor-summed terms by |batch + buffer|
    init_scale: float = 1.0
    buffer_capacity: int = 10
    exemplars_per_class: int = 5
    train_scenes_per_task: int = 60
    eval_scenes: int = 60

    def __post_init__(self):
        if self.relabel not in RELABEL_MODES:
            raise ValueError(f"relabel must be one of {RELABEL_MODES}")
        if self.relabel_scope not in ("batch", "image"):
            raise ValueError("relabel_scope must be 'batch' or 'image'")
        if self.anchor_reduction not in ("mean", "sum"):
            raise ValueError("anchor_reduction must be 'mean' or 'sum'")
        if self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError("batch_size and embed_dim must be >= 1")

    @property
    def unknown_enabled(self) -> bool:
        return self.relabel != "off"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "MethodConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        return cls(loss=loss, **d)


@dataclass
class StepStats:
    delta: list[float | None] = field(default_factory=list)
    n_unmatched: int = 0
    n_relabeled: int = 0


@dataclass
class ModelState:
    params: EmbedderParams
    buffer: ReplayBuffer
    exemplars: ExemplarStore
    delta_eval: float | None = None
    step: int = 0
    task: int = 0
    rng_state: dict | None = None

    def checkpoint(self) -> dict:
        """JSON-ready snapshot: parameters, embedding buffer, task index and training rng state."""
        return {
            "params": self.params.to_dict(),
            "buffer": self.buffer.to_dict(),
            "task": self.task,
            "step": self.step,
            "delta_eval": self.delta_eval,
            "rng_state": self.rng_state,
        }


def _slots(n_classes: int) -> tuple[int, int]:
    return n_classes, n_classes + 1  # unknown, background


def masked_scores(scores: np.ndarray, n_classes: int, revealed: Sequence[int], unknown_enabled: bool) -> np.ndarray:
    """Hide unrevealed class slots (and the unknown slot when no method supervises it)."""
    keep = np.zeros(scores.shape[1], dtype=bool)
    keep[list(revealed)] = True
    unk, bg = _slots(n_classes)
    keep[bg] = True
    keep[unk] = unknown_enabled
    return np.where(keep, scores, MASKED)


def relabel_targets(z, labels, image_ids, centroids: CentroidSet, c: float, mode: str, scope: str):
    """Training targets for one batch: matched queries keep their class, relabeled ones become unknown.

    Returns ``(relabeled_mask, deltas)`` over all queries.
    """
    matched = labels >= 0
    relabeled = np.zeros(len(labels), dtype=bool)
    groups = [np.arange(len(labels))] if scope == "batch" else [np.flatnonzero(image_ids == s) for s in np.unique(image_ids)]
    deltas = []
    for idx in groups:
        m, u = idx[matched[idx]], idx[~matched[idx]]
        dec = relabel(z[m], z[u], centroids, c, mode)
        deltas.append(dec.threshold_delta_B)
        for j in dec.relabeled:
            relabeled[u[j]] = True
    return relabeled, deltas


@dataclass
class Objective:
    loss: float
    grads: EmbedderParams
    z: np.ndarray
    matched: np.ndarray
    relabeled: np.ndarray
    deltas: list


def objective(
    params: EmbedderParams,
    batch: Sequence[TrainingScene],
    buffer: ReplayBuffer,
    world: World,
    revealed: Sequence[int],
    method: MethodConfig,
    rng: np.random.Generator,
) -> Objective:
    """Total loss of one batch and its parameter gradients; nothing is mutated."""
    cfg = method.loss
    c = cfg.curvature
    n_classes = world.num_classes
    unk, bg = _slots(n_classes)
    feats = np.concatenate([s.features for s in batch])
    labels = np.concatenate([s.labels for s in batch])
    image_ids = np.concatenate([np.full(len(s.labels), s.scene_id) for s in batch])
    q, z, scores = forward(params, feats, c)

    centroids = class_centroids(buffer, c)
    relabeled, deltas = relabel_targets(z, labels, image_ids, centroids, c, method.relabel, method.relabel_scope)
    targets = np.where(labels >= 0, labels, np.where(relabeled, unk, bg))
    cls = classification_loss(masked_scores(scores, n_classes, revealed, method.unknown_enabled), targets)

    matched = np.flatnonzero(labels >= 0)
    grad_z = np.zeros_like(z)
    hyp_val = reg_val = 0.0
    scale = 1.0 / (len(matched) + len(buffer)) if method.anchor_reduction == "mean" and len(matched) else 1.0
    if len(matched) and cfg.alpha > 0:
        hyp = hyp_contrastive_loss(z[matched], labels[matched], buffer, cfg, rng)
        hyp_val = scale * hyp.value
        grad_z[matched] += cfg.alpha * scale * hyp.grad
    if len(matched) and cfg.beta > 0:
        reg = superclass_reg_loss(z[matched], labels[matched], buffer, world.categories, cfg)
        reg_val = scale * reg.value
        grad_z[matched] += cfg.beta * scale * reg.grad

    grads = backward(params, feats, q, c, grad_z=grad_z, grad_scores=cls.grad)
    loss = total_loss(cls.value, hyp_val, reg_val, cfg)
    return Objective(loss, grads, z, matched, relabeled, deltas)


def train_step(
    state: ModelState,
    batch: Sequence[TrainingScene],
    world: World,
    revealed: Sequence[int],
    method: MethodConfig,
    lr: float,
    rng: np.random.Generator,
    stats: StepStats | None = None,
) -> float:
    """One SGD step on a batch of scenes; updates ``state`` in place and returns the total loss."""
    obj = objective(state.params, batch, state.buffer, world, revealed, method, rng)
    grads = obj.grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in (grads.W, grads.H, grads.b)))
    if not np.isfinite(norm):
        raise TrainingDivergence("non-finite gradient", state.step)
    if method.grad_clip and norm > method.grad_clip:
        s = method.grad_clip / norm
        grads = EmbedderParams(grads.W * s, grads.H * s, grads.b * s)
    state.params = sgd_step(state.params, grads, lr, state.step)
    labels = np.concatenate([s.labels for s in batch])
    state.buffer.push_many(labels[obj.matched], obj.z[obj.matched])
    state.step += 1
    if stats is not None:
        stats.delta.extend(obj.deltas)
        stats.n_unmatched += int(np.sum(labels < 0))
        stats.n_relabeled += int(obj.relabeled.sum())
    return obj.loss


def predict(
    params: EmbedderParams,
    scene: SceneRecord,
    world: World,
    revealed: Sequence[int],
    method: MethodConfig,
    centroids: CentroidSet | None = None,
    delta: float | None = None,
) -> list[Detection]:
    """Detections for every non-background query of a scene.

    With ``centroids`` and ``delta`` given, an unknown prediction survives only
    if the query lies within ``delta`` of some frozen class centroid.
    """
    c = method.loss.curvature
    feats, boxes = scene.queries()
    _, z, scores = forward(params, feats, c)
    scores = masked_scores(scores, world.num_classes, revealed, method.unknown_enabled)
    probs = np.exp(scores - scores.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    unk, bg = _slots(world.num_classes)
    pred = probs.argmax(1)
    keep = pred != bg
    if centroids is not None and delta is not None and len(centroids):
        far = min_centroid_dist(z, centroids, c) > delta
        keep &= ~((pred == unk) & far)
    out = []
    for i in np.flatnonzero(keep):
        label = UNKNOWN if pred[i] == unk else int(pred[i])
        out.append(Detection(scene.scene_id, label, float(probs[i, pred[i]]), tuple(boxes[i])))
    return out


def ground_truth(scene: SceneRecord, world: World, task: int) -> list[GroundTruth]:
    unknown = set(world.schedule.unknown(task))
    with unaudited():
        return [GroundTruth(scene.scene_id, o.class_id, o.box, o.class_id in unknown) for o in scene.objects]


@dataclass
class ProtocolResult:
    reports: list[MetricsReport]
    state: ModelState
    relabel_counts: list[tuple[int, int]] = field(default_factory=list)  # (unmatched, relabeled) per task


def _phase_batches(scenes, batch_size, rng):
    order = rng.permutation(len(scenes))
    for i in range(0, len(order), batch_size):
        yield [scenes[j] for j in order[i:i + batch_size]]


def run_protocol(
    world: World,
    method: MethodConfig,
    schedule: Sequence[Phase] | None = None,
    seed: int = 0,
    on_task_end: Callable[[int, ModelState, MetricsReport], None] | None = None,
) -> ProtocolResult:
    """Train and evaluate task by task; one :class:`MetricsReport` per task.

    Randomness derives from ``seed`` through independent child streams for
    training scenes, evaluation scenes, initialisation and training.
    """
    T = world.schedule.num_tasks
    schedule = list(schedule) if schedule is not None else default_schedule(T, method.base_lr, method.epoch_scale)
    ss_train, ss_eval, ss_init, ss_fit = np.random.SeedSequence(seed).spawn(4)
    rng_train, rng_eval = np.random.default_rng(ss_train), np.random.default_rng(ss_eval)
    rng_fit = np.random.default_rng(ss_fit)
    n_classes = world.num_classes
    state = ModelState(
        EmbedderParams.init(world.config.feature_dim, method.embed_dim, n_classes + 2,
                            np.random.default_rng(ss_init), method.init_scale),
        ReplayBuffer(method.buffer_capacity),
        ExemplarStore(method.exemplars_per_class),
    )
    reports, counts = [], []
    next_id = 0
    for t in range(1, T + 1):
        new = world.schedule.new(t)
        revealed = world.schedule.known(t)
        data = []
        for _ in range(method.train_scenes_per_task):
            data.append(gen_scene(world, t, rng_train, next_id, known_classes=new))
            next_id += 1
        replay = [reveal(s, revealed) for s in state.exemplars.all_scenes()]
        stats = StepStats()
        for phase in (p for p in schedule if p.task == t):
            active = new if phase.labels == "new" else revealed
            scenes = data + (replay if phase.kind == "finetune" else [])
            views = [annotate(s, active) for s in scenes]
            for _ in range(phase.epochs):
                stats = StepStats()
                for batch in _phase_batches(views, method.batch_size, rng_fit):
                    loss = train_step(state, batch, world, revealed, method, phase.lr, rng_fit, stats)
                    if not np.isfinite(loss):
                        raise TrainingDivergence("non-finite loss", state.step)
        counts.append((stats.n_unmatched, stats.n_relabeled))
        finite = [d for d in stats.delta if d is not None]
        state.delta_eval = max(finite) if finite else None
        state.exemplars = snapshot_exemplars(state.exemplars, data, method.exemplars_per_class, rng_fit)
        state.task = t
        state.rng_state = rng_fit.bit_generator.state

        centroids = class_centroids(state.buffer, method.loss.curvature)
        gate = method.eval_gate and method.relabel == "adaptive"
        dets, gts = [], []
        for _ in range(method.eval_scenes):
            scene = gen_scene(world, t, rng_eval, next_id)
            next_id += 1
            dets += predict(state.params, scene, world, revealed, method,
                            centroids if gate else None, state.delta_eval if gate else None)
            gts += ground_truth(scene, world, t)
        report = evaluate(dets, gts, previous=world.schedule.previous(t), current=new, task=t)
        reports.append(report)
        log.info("task %d: U-Recall %s mAP %s", t, report.u_recall, report.map_both)
        if on_task_end is not None:
            on_task_end(t, state, report)
    return ProtocolResult(reports, state, counts)


def headline(reports: Sequence[MetricsReport]) -> tuple[float | None, float | None]:
    """Mean U-Recall over tasks that have unknowns and mean mAP (both groups) over all tasks."""
    ur = [r.u_recall for r in reports if r.u_recall is not None]
    mp = [r.map_both for r in reports if r.map_both is not None]
    return (float(np.mean(ur)) if ur else None, float(np.mean(mp)) if mp else None)


COMPONENT_VARIANTS = ("full", "cosine (c=0)", "w/o superclass (beta=0)", "w/o adaptive relabel (all unmatched)")
CURVATURES = (0.0, 0.1, 0.2, 0.5)


def variant_method(base: MethodConfig, name: str) -> MethodConfig:
    if name == "full":
        return base
    if name == "cosine (c=0)":
        return replace(base, loss=replace(base.loss, curvature=0.0))
    if name == "w/o superclass (beta=0)":
        return replace(base, loss=replace(base.loss, beta=0.0))
    if name == "w/o adaptive relabel (all unmatched)":
        return replace(base, relabel="all-unmatched")
    raise ValueError(f"unknown variant {name!r}")


def ablation_suite(world_cfg: WorldConfig, base: MethodConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> dict:
    """Component ablation and curvature sweep, averaged over seeds.

    Each seed builds its own world (``world_cfg`` with that seed) shared by
    all variants; identical method configurations are run once.
    """
    cache: dict[str, list[MetricsReport]] = {}

    def run(method: MethodConfig, seed: int):
        key = repr((method, seed))
        if key not in cache:
            world = gen_world(replace(world_cfg, seed=seed))
            cache[key] = run_protocol(world, method, seed=seed).reports
        return cache[key]

    def row(name: str, method: MethodConfig) -> dict:
        per_seed = [headline(run(method, s)) for s in seeds]
        ur = [u for u, _ in per_seed if u is not None]
        mp = [m for _, m in per_seed if m is not None]
        return {
            "variant": name,
            "u_recall": float(np.mean(ur)) if ur else None,
            "map": float(np.mean(mp)) if mp else None,
            "u_recall_per_seed": [u for u, _ in per_seed],
            "map_per_seed": [m for _, m in per_seed],
        }

    components = [row(n, variant_method(base, n)) for n in COMPONENT_VARIANTS]
    curvature = [row(f"c={c:g}", replace(base, loss=replace(base.loss, curvature=c))) for c in CURVATURES]
    return {"seeds": list(seeds), "components": components, "curvature": curvature}


def format_ablation(table: dict) -> str:
    def fmt(v):
        return "   n/a" if v is None else f"{100 * v:6.1f}"

    lines = []
    for title, key in (("Component ablation", "components"), ("Curvature sweep", "curvature")):
        lines.append(title)
        lines.append(f"{'':40s} {'U-Recall':>8s} {'mAP':>8s}")
        for r in table[key]:
            lines.append(f"{r['variant']:40s} {fmt(r['u_recall']):>8s} {fmt(r['map']):>8s}")
        lines.append("")
    return "\n".join(lines)
