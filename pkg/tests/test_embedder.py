import numpy as np
import pytest

from hypow.embedder import (
    EmbedderParams,
    TrainingDivergence,
    backward,
    default_schedule,
    embed,
    forward,
    sgd_step,
)


def params(rng, F=5, d=4, slots=3, scale=1.0):
    return EmbedderParams.init(F, d, slots, rng, scale)


def test_shapes_and_ball(rng):
    p = params(rng)
    feats = rng.normal(scale=10, size=(7, 5))
    q, z, s = forward(p, feats, 0.5)
    assert q.shape == z.shape == (7, 4) and s.shape == (7, 3)
    assert np.all(0.5 * np.sum(z * z, 1) < 1)
    np.testing.assert_allclose(embed(p, feats, 0.5), z)
    with pytest.raises(ValueError):
        forward(p, np.zeros((2, 6)), 0.5)


@pytest.mark.parametrize("c", [0.0, 0.1, 0.5])
def test_backward_matches_finite_differences(rng, c):
    p = params(rng, scale=0.5)
    feats = rng.normal(size=(6, 5))
    gz, gs = rng.normal(size=(6, 4)), rng.normal(size=(6, 3))

    def f(P):
        _, z, s = forward(P, feats, c)
        return float(np.sum(z * gz) + np.sum(s * gs))

    q, _, _ = forward(p, feats, c)
    g = backward(p, feats, q, c, grad_z=gz, grad_scores=gs)
    h = 1e-6
    for name in ("W", "H", "b"):
        arr = getattr(p, name)
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = p.copy(), p.copy()
            getattr(plus, name)[idx] += h
            getattr(minus, name)[idx] -= h
            num[idx] = (f(plus) - f(minus)) / (2 * h)
        got = getattr(g, name)
        assert np.linalg.norm(got - num) <= 1e-5 * max(np.linalg.norm(num), 1.0)


def test_sgd_trivial_cases(rng):
    p = params(rng)
    zero = EmbedderParams(np.zeros_like(p.W), np.zeros_like(p.H), np.zeros_like(p.b))
    same = sgd_step(p, zero, 0.1)
    assert np.array_equal(same.W, p.W) and np.array_equal(same.H, p.H)
    g = params(rng)
    assert np.array_equal(sgd_step(p, g, 0.0).W, p.W)


def test_sgd_decreases_convex_quadratic(rng):
    p = params(rng)

    def value(P):
        return sum(float(np.sum(a * a)) for a in (P.W, P.H, P.b))

    grads = EmbedderParams(2 * p.W, 2 * p.H, 2 * p.b)
    assert value(sgd_step(p, grads, 0.1)) < value(p)


def test_sgd_divergence_carries_step(rng):
    p = params(rng)
    bad = EmbedderParams(np.full_like(p.W, np.nan), p.H, p.b)
    with pytest.raises(TrainingDivergence) as exc:
        sgd_step(p, bad, 0.1, step=17)
    assert exc.value.step == 17 and "17" in str(exc.value)


def test_params_roundtrip(rng):
    p = params(rng)
    q = EmbedderParams.from_dict(p.to_dict())
    assert all(np.array_equal(getattr(p, k), getattr(q, k)) for k in ("W", "H", "b"))


def test_schedule_structure():
    four = default_schedule(4)
    assert len(four) == 8
    assert [ph.kind for ph in four] == ["task", "tail"] + ["task", "finetune"] * 3
    assert all(ph.lr > 0 for ph in four)
    assert four[1].lr == pytest.approx(0.1 * four[0].lr)
    assert [ph.labels for ph in four[2:]] == ["new", "all"] * 3
    one = default_schedule(1)
    assert [ph.kind for ph in one] == ["task", "tail"]


def test_schedule_epoch_scale():
    full = default_schedule(4, epoch_scale=1.0)
    assert [ph.epochs for ph in full] == [40, 10, 20, 60, 20, 60, 20, 70]
    tiny = default_schedule(4, epoch_scale=0.001)
    assert all(ph.epochs == 1 for ph in tiny)
    with pytest.raises(ValueError):
        default_schedule(0)
