"""Linear query embedder with a classification head, plain SGD and the phase schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import exp_map0, exp_map0_vjp, project_to_ball


class TrainingDivergence(RuntimeError):
    """Raised when a gradient step produces non-finite values."""

    def __init__(self, msg: str, step: int | None = None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


@dataclass
class EmbedderParams:
    """``W`` maps features to the tangent space; ``H``, ``b`` score ``|classes| + 2`` slots."""

    W: np.ndarray  # (d, feature_dim)
    H: np.ndarray  # (n_slots, d)
    b: np.ndarray  # (n_slots,)

    @classmethod
    def init(cls, feature_dim: int, d: int, n_slots: int, rng: np.random.Generator, scale: float = 0.1):
        W = rng.normal(scale=scale / np.sqrt(feature_dim), size=(d, feature_dim))
        H = rng.normal(scale=scale / np.sqrt(d), size=(n_slots, d))
        return cls(W, H, np.zeros(n_slots))

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.W.copy(), self.H.copy(), self.b.copy())

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "H": self.H.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data) -> "EmbedderParams":
        return cls(*(np.asarray(data[k], dtype=np.float64) for k in ("W", "H", "b")))


def tangent(params: EmbedderParams, features) -> np.ndarray:
    F = np.asarray(features, dtype=np.float64)
    if F.shape[-1] != params.W.shape[1]:
        raise ValueError(f"feature dim {F.shape[-1]} != embedder input dim {params.W.shape[1]}")
    return F @ params.W.T


def embed(params: EmbedderParams, features, c: float) -> np.ndarray:
    """Ball point ``exp_map0(W f)`` for each feature row."""
    return project_to_ball(exp_map0(tangent(params, features), c), c)


def forward(params: EmbedderParams, features, c: float):
    """Tangent vectors, ball points and raw class scores for a feature batch."""
    q = tangent(params, features)
    z = exp_map0(q, c)
    scores = q @ params.H.T + params.b
    return q, z, scores


def backward(params: EmbedderParams, features, q, c: float, grad_z=None, grad_scores=None) -> EmbedderParams:
    """Parameter gradients given upstream gradients on ball points and scores."""
    F = np.asarray(features, dtype=np.float64)
    gq = np.zeros_like(q)
    gH = np.zeros_like(params.H)
    gb = np.zeros_like(params.b)
    if grad_z is not None:
        gq += exp_map0_vjp(q, grad_z, c)
    if grad_scores is not None:
        gq += grad_scores @ params.H
        gH = grad_scores.T @ q
        gb = grad_scores.sum(0)
    return EmbedderParams(gq.T @ F, gH, gb)


def sgd_step(params: EmbedderParams, grads: EmbedderParams, lr: float, step: int | None = None) -> EmbedderParams:
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    for g in (grads.W, grads.H, grads.b):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence("non-finite gradient", step)
    return EmbedderParams(params.W - lr * grads.W, params.H - lr * grads.H, params.b - lr * grads.b)


@dataclass(frozen=True)
class Phase:
    kind: str  # "task", "tail" or "finetune"
    task: int  # 1-based
    epochs: int
    lr: float
    labels: str  # "new": classes introduced by this task; "all": every revealed class


# (task epochs, follow-up epochs, follow-up lr ratio) from the reference schedule
_TASK1 = (40, 10, 0.1)
_LATER = {2: (20, 60, 1.0), 3: (20, 60, 1.0), 4: (20, 70, 1.0)}


def default_schedule(num_tasks: int, base_lr: float = 0.05, epoch_scale: float = 0.1) -> list[Phase]:
    """Task 1 trains then decays the rate; each later task trains on new labels then fine-tunes on all."""
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    if base_lr <= 0:
        raise ValueError("base_lr must be > 0")

    def ep(n):
        return max(1, int(round(n * epoch_scale)))

    phases = [
        Phase("task", 1, ep(_TASK1[0]), base_lr, "new"),
        Phase("tail", 1, ep(_TASK1[1]), base_lr * _TASK1[2], "new"),
    ]
    for t in range(2, num_tasks + 1):
        n_task, n_ft, ratio = _LATER.get(t, _LATER[3])
        phases.append(Phase("task", t, ep(n_task), base_lr, "new"))
        phases.append(Phase("finetune", t, ep(n_ft), base_lr * ratio, "all"))
    return phases
