"""Poincare-ball primitives with curvature ``c >= 0``.

Points are numpy arrays whose last axis is the embedding dimension; leading
axes broadcast. ``c == 0`` is a separate Euclidean code path everywhere.
"""

from __future__ import annotations

import numpy as np

BALL_EPS = 1e-5
MIN_NORM = 1e-12


class GeometryError(ValueError):
    """Invalid input to a geometric primitive."""


def _check_c(c: float) -> float:
    c = float(c)
    if not np.isfinite(c) or c < 0:
        raise GeometryError(f"curvature must be finite and >= 0, got {c}")
    return c


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1, keepdims=True)


def project_to_ball(v, c: float, margin: float = BALL_EPS) -> np.ndarray:
    """Rescale points with ``c|v|^2 >= (1 - margin)^2`` to norm ``(1 - margin)/sqrt(c)``."""
    c = _check_c(c)
    v = np.asarray(v, dtype=np.float64)
    if c == 0:
        return v.copy()
    if not 0 < margin <= 1e-2:
        raise GeometryError(f"margin must lie in (0, 1e-2], got {margin}")
    max_norm = (1.0 - margin) / np.sqrt(c)
    norm = _norm(v)
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, MIN_NORM), 1.0)
    return v * scale


def exp_map0(v, c: float) -> np.ndarray:
    """Exponential map at the origin: ``tanh(sqrt(c)|v|) v / (sqrt(c)|v|)``."""
    c = _check_c(c)
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise GeometryError("exp_map0 received non-finite input")
    if c == 0:
        return v.copy()
    sc = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    factor = np.where(norm < MIN_NORM, 1.0, np.tanh(sc * safe) / (sc * safe))
    return project_to_ball(v * factor, c)


def exp_map0_vjp(v, grad_out, c: float) -> np.ndarray:
    """Pull a gradient w.r.t. ``exp_map0(v)`` back to ``v`` (projection included)."""
    c = _check_c(c)
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if c == 0:
        return g.copy()
    sc = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    t = np.tanh(sc * safe)
    f = np.where(norm < MIN_NORM, 1.0, t / (sc * safe))
    z = v * f
    znorm = _norm(z)
    max_norm = (1.0 - BALL_EPS) / sc
    clipped = znorm > max_norm
    # d proj / dz = (r/|z|)(I - zz^T/|z|^2) when clipped, identity otherwise
    zhat = z / np.maximum(znorm, MIN_NORM)
    g_proj = (max_norm / np.maximum(znorm, MIN_NORM)) * (g - zhat * np.sum(zhat * g, -1, keepdims=True))
    g = np.where(clipped, g_proj, g)
    # J = f I + (f'(n)/n) v v^T, f'(n) = sech^2(sc n)/n - tanh(sc n)/(sc n^2)
    fprime = (1.0 - t**2) / safe - t / (sc * safe**2)
    coef = np.where(norm < MIN_NORM, 0.0, fprime / safe)
    return f * g + coef * v * np.sum(v * g, -1, keepdims=True)


def _mobius_add_raw(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    xy = np.sum(x * y, -1, keepdims=True)
    x2 = np.sum(x * x, -1, keepdims=True)
    y2 = np.sum(y * y, -1, keepdims=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    den = 1 + 2 * c * xy + c**2 * x2 * y2
    return num / np.maximum(den, MIN_NORM)


def mobius_add(x, y, c: float) -> np.ndarray:
    """Mobius addition ``x (+)_c y``, re-projected into the open ball."""
    c = _check_c(c)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise GeometryError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    if c == 0:
        return x + y
    return project_to_ball(_mobius_add_raw(x, y, c), c)


def hyp_dist(x, y, c: float, variant: str = "artanh") -> np.ndarray:
    """Geodesic distance ``(2/sqrt(c)) artanh(sqrt(c)|-x (+)_c y|)``; ``2|x-y|`` at ``c=0``.

    ``variant="arctan"`` swaps artanh for arctan, for comparison runs only.
    Returns a float for 1-D inputs, otherwise an array over the leading axes.
    """
    c = _check_c(c)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if c == 0:
        out = 2.0 * np.linalg.norm(x - y, axis=-1)
    else:
        sc = np.sqrt(c)
        arg = sc * np.linalg.norm(_mobius_add_raw(-x, y, c), axis=-1)
        if variant == "artanh":
            out = 2.0 / sc * np.arctanh(np.minimum(arg, 1.0 - BALL_EPS))
        elif variant == "arctan":
            out = 2.0 / sc * np.arctan(arg)
        else:
            raise GeometryError(f"unknown distance variant {variant!r}")
    return float(out) if np.ndim(out) == 0 else out


def dist_grad(x, y, c: float, tol: float = 1e-12):
    """Analytic gradients of :func:`hyp_dist` w.r.t. ``x`` and ``y``.

    Uses ``|-x (+) y|^2 = |x-y|^2 / D`` with
    ``D = 1 - 2c<x,y> + c^2 |x|^2 |y|^2``. Coincident pairs (``|x-y| < tol``)
    get zero vectors, a valid subgradient.
    """
    c = _check_c(c)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = x - y
    a = np.sum(diff * diff, -1, keepdims=True)
    xy = np.sum(x * y, -1, keepdims=True)
    x2 = np.sum(x * x, -1, keepdims=True)
    y2 = np.sum(y * y, -1, keepdims=True)
    den = 1 - 2 * c * xy + c**2 * x2 * y2
    ratio = a / den
    s2 = np.minimum(c * ratio, (1.0 - BALL_EPS) ** 2)
    root = np.sqrt(np.maximum(ratio, tol**2))
    pref = 1.0 / ((1.0 - s2) * root * den**2)
    gx = pref * (2 * diff * den - a * (-2 * c * y + 2 * c**2 * y2 * x))
    gy = pref * (-2 * diff * den - a * (-2 * c * x + 2 * c**2 * x2 * y))
    degenerate = np.sqrt(a) < tol
    gx = np.where(degenerate, 0.0, gx)
    gy = np.where(degenerate, 0.0, gy)
    return gx, gy


def pairwise_dist(X, Y, c: float) -> np.ndarray:
    """Distance matrix between rows of ``X`` (n, d) and ``Y`` (m, d)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return np.atleast_2d(hyp_dist(X[:, None, :], Y[None, :, :], c)).reshape(len(X), len(Y))


def lorentz_factor(x, c: float) -> np.ndarray:
    """``1/sqrt(1 - c|x|^2)``; raises if the point is not strictly inside the ball."""
    c = _check_c(c)
    x = np.asarray(x, dtype=np.float64)
    arg = 1.0 - c * np.sum(x * x, axis=-1)
    if np.any(arg <= 0):
        raise GeometryError("point lies outside the Poincare ball")
    out = 1.0 / np.sqrt(arg)
    return float(out) if np.ndim(out) == 0 else out


def hyp_ave(points, c: float) -> np.ndarray:
    """Lorentz-factor weighted mean of ball points (rows of ``points``)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0 or pts.size == 0:
        raise GeometryError("hyp_ave needs at least one point")
    gamma = np.atleast_1d(lorentz_factor(pts, c))
    return (gamma[:, None] * pts).sum(0) / gamma.sum()


def cosine_distance(x, y) -> np.ndarray:
    """``2 - 2 cos(x, y)``, the squared distance between the normalised vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x, axis=-1), np.linalg.norm(y, axis=-1)
    if np.any(nx < MIN_NORM) or np.any(ny < MIN_NORM):
        raise GeometryError("cosine distance is undefined for zero vectors")
    out = 2.0 - 2.0 * np.sum(x * y, axis=-1) / (nx * ny)
    return float(out) if np.ndim(out) == 0 else out
