"""Randomised invariant suite for the ball primitives, shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import cosine_distance, dist_grad, exp_map0, hyp_ave, hyp_dist, mobius_add

CURVATURES = (0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float  # largest observed violation
    tol: float
    cases: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} worst={self.worst:.3e} tol={self.tol:.0e} cases={self.cases}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst, "tol": self.tol, "cases": self.cases}


def _ball(rng, n, dim, c, max_frac=0.9):
    """Points uniform in direction with norm up to ``max_frac`` of the ball radius."""
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = rng.uniform(0, max_frac, size=(n, 1)) / np.sqrt(c)
    return v * r


def _result(name, violations, tol) -> CheckResult:
    worst = float(np.max(violations)) if len(violations) else 0.0
    return CheckResult(name, bool(worst <= tol), worst, tol, len(violations))


def run_suite(seed: int = 0, cases: int = 200, dim: int = 5, variant: str = "artanh") -> list[CheckResult]:
    """Run every geometric invariant on ``cases`` random draws per curvature."""
    rng = np.random.default_rng(seed)

    def d(x, y, c):
        return hyp_dist(x, y, c, variant=variant)

    sym, ident, pos, tri, closure, trans, radial = [], [], [], [], [], [], []
    for c in CURVATURES:
        x, y, w = (_ball(rng, cases, dim, c, 0.8) for _ in range(3))
        dxy, dyx = d(x, y, c), d(y, x, c)
        sym.append(np.abs(dxy - dyx) / np.maximum(dxy, 1.0))
        ident.append(np.abs(d(x, x, c)))
        pos.append(np.where(dxy > 0, 0.0, 1.0))
        tri.append(np.maximum(dxy - d(x, w, c) - d(w, y, c), 0.0))

        v = rng.normal(scale=rng.uniform(0.1, 20.0, size=(cases, 1)), size=(cases, dim))
        norms = [c * np.sum(exp_map0(v, c) ** 2, -1), c * np.sum(mobius_add(x, y, c) ** 2, -1),
                 c * np.sum(hyp_ave(x, c) ** 2, keepdims=True)]
        closure.append(np.maximum(np.concatenate(norms) - (1 - 1e-12), 0.0))

        # keep a (+) x inside the well-conditioned part of the ball
        a, p, q = (_ball(rng, cases, dim, c, 0.45) for _ in range(3))
        trans.append(np.abs(d(mobius_add(a, p, c), mobius_add(a, q, c), c) - d(p, q, c)))

        t = rng.normal(size=(cases, dim))
        t *= rng.uniform(0.05, 1.5, size=(cases, 1)) / np.sqrt(c) / np.linalg.norm(t, axis=1, keepdims=True)
        radial.append(np.abs(d(np.zeros_like(t), exp_map0(t, c), c) - 2 * np.linalg.norm(t, axis=1)))

    x, y = _ball(rng, cases, dim, 1.0, 0.5), _ball(rng, cases, dim, 1.0, 0.5)
    limit = np.abs(d(x, y, 1e-8) - 2 * np.linalg.norm(x - y, axis=1))

    u, w = rng.normal(size=(cases, dim)), rng.normal(size=(cases, dim))
    nu = u / np.linalg.norm(u, axis=1, keepdims=True)
    nw = w / np.linalg.norm(w, axis=1, keepdims=True)
    cosine = np.abs(4 * np.sum((nu - nw) ** 2, -1) - 4 * cosine_distance(u, w))

    gerr = []
    h = 1e-6
    for c in (0.0, 0.1, 0.2, 0.5):
        scale = 1.0 if c == 0 else 1.0 / np.sqrt(c)
        x, y = rng.uniform(-0.4, 0.4, size=(2, cases // 4 or 1, dim)) * scale / np.sqrt(dim)
        gx, _ = dist_grad(x, y, c)
        num = np.zeros_like(x)
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            num[:, k] = (hyp_dist(x + e, y, c) - hyp_dist(x - e, y, c)) / (2 * h)
        gerr.append(np.linalg.norm(gx - num, axis=1) / np.maximum(np.linalg.norm(num, axis=1), 1e-8))

    cat = np.concatenate
    return [
        _result("symmetry", cat(sym), 1e-9),
        _result("identity", cat(ident), 1e-9),
        _result("positivity", cat(pos), 0.0),
        _result("triangle inequality", cat(tri), 1e-7),
        _result("ball closure", cat(closure), 0.0),
        _result("mobius translation", cat(trans), 1e-6),
        _result("radial consistency", cat(radial), 1e-6),
        _result("euclidean limit c=1e-8", limit, 1e-5),
        _result("cosine identity", cosine, 1e-9),
        _result("distance gradient", cat(gerr), 1e-4),
    ]
