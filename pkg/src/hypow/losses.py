"""Hyperbolic contrastive loss, superclass regularizer and classification surrogate.

All losses return a :class:`LossTerm` with the value and analytic gradients
with respect to the batch embeddings (or scores). Buffer entries are treated
as constants: they act as anchors and negatives but receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .geometry import dist_grad, hyp_ave, pairwise_dist
from .memory import CategoryMap, ReplayBuffer


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.05
    beta: float = 0.02
    tau1: float = 0.2
    tau2: float = 0.4
    curvature: float = 0.1
    k_pos: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("temperatures must be > 0")
        if self.curvature < 0:
            raise ValueError("curvature must be >= 0")
        if self.k_pos < 1:
            raise ValueError("k_pos must be >= 1")


class LossTerm(NamedTuple):
    value: float
    grad: np.ndarray
    skipped: bool = False


def _pair_grads(Z: np.ndarray, G: np.ndarray, c: float, targets: np.ndarray | None = None) -> np.ndarray:
    """Backprop ``dL/dD`` through the distance matrix.

    ``G[i, j]`` is the loss sensitivity to ``d(Z[i], T[j])`` where ``T`` is
    ``targets`` (or ``Z`` itself). Returns gradients w.r.t. ``Z`` and, when
    ``targets`` is given, nothing for ``T`` (held constant).
    """
    T = Z if targets is None else targets
    rows, cols = np.nonzero(G)
    out = np.zeros_like(Z)
    if len(rows) == 0:
        return out
    gx, gy = dist_grad(Z[rows], T[cols], c)
    w = G[rows, cols][:, None]
    np.add.at(out, rows, w * gx)
    if targets is None:
        np.add.at(out, cols, w * gy)
    return out


def _softmin_terms(D, Pw, neg, tau):
    """Sum over rows of ``sum_j Pw_ij D_ij / tau + logsumexp_{j in neg_i}(-D_ij / tau)``.

    Returns the value and ``dL/dD``.
    """
    logits = np.where(neg, -D / tau, -np.inf)
    lse = logsumexp(logits, axis=1)
    total = float(np.sum(Pw * D) / tau + lse.sum())
    S = np.where(neg, np.exp(logits - lse[:, None]), 0.0)
    return total, (Pw - S) / tau


def hyp_contrastive_loss(
    points,
    labels,
    buffer: ReplayBuffer,
    cfg: LossConfig,
    rng: np.random.Generator,
) -> LossTerm:
    """Hyperbolic contrastive loss over anchors ``A = batch + buffer``.

    Each anchor draws ``cfg.k_pos`` positives of its class from the buffer
    (never itself); every other element of ``A`` is a negative. Per anchor the
    term is ``d(z, z+)/tau1 + log sum_neg exp(-d(z, z-)/tau1)``, averaged over
    positives when ``k_pos > 1``. Anchors without a positive are skipped.
    Gradients are returned for batch rows only.
    """
    Zb = np.atleast_2d(np.asarray(points, dtype=np.float64))
    yb = np.asarray(labels, dtype=int).reshape(-1)
    nb = len(yb)
    if nb == 0:
        return LossTerm(0.0, np.zeros((0, Zb.shape[-1] if Zb.size else 0)), True)
    Zm, ym = buffer.all_entries()
    if len(ym) == 0:
        return LossTerm(0.0, np.zeros_like(Zb), True)
    # row offset of each class block inside the buffer part of A
    offsets: dict[int, int] = {}
    for pos, k in enumerate(ym):
        offsets.setdefault(int(k), pos)
    Z = np.concatenate([Zb, Zm])
    y = np.concatenate([yb, ym])
    n = len(y)
    c, tau, kp = cfg.curvature, cfg.tau1, cfg.k_pos

    pos_idx: list[np.ndarray | None] = []
    for i in range(n):
        cls = int(y[i])
        size = buffer.size(cls)
        own = i - nb - offsets[cls] if i >= nb else None
        if size == 0 or (own is not None and size < 2):
            pos_idx.append(None)
            continue
        cand = np.arange(size)
        if own is not None:
            cand = cand[cand != own]
        pick = rng.choice(cand, size=kp, replace=kp > len(cand))
        pos_idx.append(nb + offsets[cls] + pick)

    # per-anchor positive weights and negative masks
    Pw = np.zeros((n, n))
    neg = ~np.eye(n, dtype=bool)
    for i, pos in enumerate(pos_idx):
        if pos is not None:
            np.add.at(Pw[i], pos, 1.0 / len(pos))
            neg[i, pos] = False
    valid = np.array([p is not None for p in pos_idx]) & neg.any(1)
    if not valid.any():
        return LossTerm(0.0, np.zeros_like(Zb), True)
    D = pairwise_dist(Z, Z, c)
    total, G = _softmin_terms(D[valid], Pw[valid], neg[valid], tau)
    G_full = np.zeros_like(D)
    G_full[valid] = G
    G = G_full
    grads = _pair_grads(Z, G, c)
    return LossTerm(total, grads[:nb])


def superclass_centroid(buffer: ReplayBuffer, categories: CategoryMap, category: int, c: float):
    """Hyperbolic average of every buffered embedding whose class is in ``category``.

    Returns ``None`` when the category has no stored exemplar.
    """
    pts = [buffer.entries(k) for k in categories.members(category) if buffer.size(k)]
    if not pts:
        return None
    return hyp_ave(np.concatenate(pts), c)


def superclass_reg_loss(
    points,
    labels,
    buffer: ReplayBuffer,
    categories: CategoryMap,
    cfg: LossConfig,
) -> LossTerm:
    """Superclass regularizer: pull anchors to their category centroid, away from others.

    Centroids come from the buffer and are constants for the step. Anchors are
    batch and buffer entries; anchors whose own category has no centroid are
    skipped, and the whole term is skipped with fewer than two centroids.
    """
    Zb = np.atleast_2d(np.asarray(points, dtype=np.float64))
    yb = np.asarray(labels, dtype=int).reshape(-1)
    nb = len(yb)
    c, tau = cfg.curvature, cfg.tau2
    empty = np.zeros((nb, Zb.shape[-1])) if nb else np.zeros((0, 0))
    cats, cents = [], []
    for p in categories.categories():
        cen = superclass_centroid(buffer, categories, p, c)
        if cen is not None:
            cats.append(p)
            cents.append(cen)
    if len(cats) < 2 or nb == 0:
        return LossTerm(0.0, empty, True)
    C = np.stack(cents)
    col = {p: j for j, p in enumerate(cats)}
    Zm, ym = buffer.all_entries()
    Z = np.concatenate([Zb, Zm]) if len(ym) else Zb
    y = np.concatenate([yb, ym]) if len(ym) else yb

    own = np.array([col.get(categories.category(int(k)), -1) for k in y])
    valid = own >= 0
    if not valid.any():
        return LossTerm(0.0, empty, True)
    D = pairwise_dist(Z[valid], C, c)
    Pw = np.zeros_like(D)
    Pw[np.arange(len(D)), own[valid]] = 1.0
    total, Gv = _softmin_terms(D, Pw, Pw == 0, tau)
    G = np.zeros((len(y), len(cats)))
    G[valid] = Gv
    grads = _pair_grads(Z, G, c, targets=C)
    return LossTerm(total, grads[:nb])


def classification_loss(scores, targets) -> LossTerm:
    """Mean softmax cross-entropy; gradient is w.r.t. the raw scores."""
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.asarray(targets, dtype=int).reshape(-1)
    n = len(t)
    if n == 0:
        return LossTerm(0.0, np.zeros_like(S), True)
    if S.shape[0] != n:
        raise ValueError(f"{S.shape[0]} score rows for {n} targets")
    if t.min() < 0 or t.max() >= S.shape[1]:
        raise ValueError(f"target label out of range [0, {S.shape[1]})")
    logp = S - logsumexp(S, axis=1, keepdims=True)
    loss = -float(logp[np.arange(n), t].mean())
    grad = np.exp(logp)
    grad[np.arange(n), t] -= 1.0
    return LossTerm(loss, grad / n)


def total_loss(cls_loss: float, hyp_loss: float, reg_loss: float, cfg: LossConfig) -> float:
    return cls_loss + cfg.alpha * hyp_loss + cfg.beta * reg_loss
