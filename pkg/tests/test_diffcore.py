import math

import numpy as np
import pytest

from splatfuse.diffcore import (AdamWState, CheckError, DimensionError, OptimizerError, Parameter,
                                RngStream, Tape, adamw_step, cosine_lr, finite_diff_check, linear_forward,
                                make_layer, make_mlp, mlp_forward, mlp_parameters, ops)
from splatfuse.diffcore.nn import Layer
from splatfuse.diffcore.tape import primitive


def _dot(v, w):
    return ops.sum_all(ops.mul(v, w))


def test_linear_examples():
    y = linear_forward(np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0]]), np.zeros(2))
    assert np.array_equal(y.value, [[2.0, 0.0]])
    y = linear_forward(np.array([[1.0, 1.0]]), np.eye(2), np.ones(2))
    assert np.array_equal(y.value, [[2.0, 2.0]])


def test_linear_shape_errors():
    with pytest.raises(DimensionError):
        linear_forward(np.ones((2, 3)), np.ones((4, 5)), np.zeros(5))
    with pytest.raises(DimensionError):
        linear_forward(np.ones((2, 4)), np.ones((4, 5)), np.zeros(4))


@pytest.mark.parametrize("seed", range(100))
def test_linear_vjp(seed):
    gen = np.random.default_rng(seed)
    x = Parameter(gen.normal(size=(3, 4)), "x")
    W = Parameter(gen.normal(size=(4, 5)), "W")
    b = Parameter(gen.normal(size=5), "b")
    w = gen.normal(size=(3, 5))
    rep = finite_diff_check(lambda: _dot(ops.linear(x, W, b), w), [x, W, b], 1e-5, 1e-6)
    assert rep.passed, str(rep)


def test_activation_examples():
    assert np.array_equal(ops.relu(np.array([-1.0, 2.0])).value, [0.0, 2.0])
    assert ops.sigmoid(np.array([0.0])).value[0] == 0.5
    with pytest.raises(ValueError):
        ops.activation(np.zeros(2), "gelu")


def test_sigmoid_no_overflow():
    with np.errstate(over="raise"):
        y = ops.sigmoid(np.array([-800.0, 800.0])).value
    assert y[0] == 0.0 and y[1] == 1.0


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "softplus", "exp", "tanh"])
@pytest.mark.parametrize("seed", range(100))
def test_activation_vjp(kind, seed):
    gen = np.random.default_rng(seed)
    v = gen.normal(size=(4, 3))
    if kind == "relu":
        v = np.where(np.abs(v) < 0.05, 0.1, v)  # away from the kink
    x = Parameter(v, "x")
    w = gen.normal(size=(4, 3))
    rep = finite_diff_check(lambda: _dot(ops.activation(x, kind), w), [x], 1e-5, 1e-6)
    assert rep.passed, str(rep)


def test_softmax_examples():
    assert np.allclose(ops.softmax(np.zeros((1, 4))).value, 0.25, atol=0, rtol=1e-15)
    assert np.allclose(ops.softmax(np.array([[math.log(2.0), 0.0]])).value, [[2 / 3, 1 / 3]], rtol=1e-14)


@pytest.mark.parametrize("seed", range(100))
def test_softmax_properties(seed):
    gen = np.random.default_rng(seed)
    z = gen.normal(size=(5, 6)) * 10
    s = ops.softmax(z).value
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)
    shifted = ops.softmax(z + gen.normal(size=(5, 1)) * 100).value
    assert np.allclose(s, shifted, rtol=0, atol=1e-12)
    p = Parameter(z / 10, "z")
    w = gen.normal(size=(5, 6))
    assert finite_diff_check(lambda: _dot(ops.softmax(p), w), [p], 1e-5, 1e-6).passed


def test_softmax_extreme_logits_finite():
    s = ops.softmax(np.array([[1e4, 0.0, -1e4]])).value
    assert np.all(np.isfinite(s)) and s[0, 0] == 1.0


@pytest.mark.parametrize("seed", range(100))
def test_structural_ops_vjp(seed):
    gen = np.random.default_rng(seed)
    a = Parameter(gen.normal(size=(6, 4)), "a")
    b = Parameter(gen.normal(size=(1, 4)), "b")
    idx = gen.integers(0, 6, 9)
    w1, w2 = gen.normal(size=(9, 4)), gen.normal(size=(6, 2))

    def f():
        t = _dot(ops.take_rows(ops.add(a, b), idx), w1)
        t = ops.add(t, _dot(ops.take_cols(ops.mul(a, b), 1, 3), w2))
        t = ops.add(t, ops.mean_all(ops.sub(a, ops.scale(b, 2.0))))
        return ops.add(t, _dot(ops.sum_axis(ops.concat([a, a], axis=1), 0), np.arange(8.0)))

    assert finite_diff_check(f, [a, b], 1e-5, 1e-6).passed


def test_scatter_and_abs():
    a = Parameter(np.array([[1.0, -2.0], [0.5, 3.0]]), "a")
    with Tape() as tape:
        out = ops.scatter_rows(a, [3, 1], 5)
        loss = _dot(ops.abs_(out), np.arange(10.0).reshape(5, 2))
    assert np.array_equal(out.value[[3, 1]], a.value) and np.all(out.value[[0, 2, 4]] == 0)
    tape.backward(loss)
    assert np.array_equal(a.grad, [[6.0, -7.0], [2.0, 3.0]])


def test_broadcast_mismatch():
    with pytest.raises(DimensionError):
        ops.add(np.ones((2, 3)), np.ones((3, 2)))


def test_ste_round_half_up_identity_grad():
    x = Parameter(np.array([0.5, 1.49, 2.5, 3.7]), "x")
    with Tape() as tape:
        y = ops.ste_round(x)
        loss = _dot(y, np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.array_equal(y.value, [1.0, 1.0, 3.0, 4.0])
    tape.backward(loss)
    assert np.array_equal(x.grad, [1.0, 2.0, 3.0, 4.0])


def test_slot_mask_hard_at_integers():
    m = ops.slot_mask(np.array([0.0, 1.0, 3.0, 4.0]), 4).value
    assert np.array_equal(m, (np.arange(4)[None, :] < np.array([0, 1, 3, 4])[:, None]).astype(float))
    m = ops.slot_mask(np.array([2.25]), 4).value
    assert np.allclose(m, [[1.0, 1.0, 0.25, 0.0]])


def test_slot_mask_subgradient_at_integer():
    k = Parameter(np.array([2.0, 4.0]), "k")
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(ops.slot_mask(k, 4), np.array([1.0, 2.0, 3.0, 4.0])))
    tape.backward(loss)
    # mean of one-sided derivatives: (slot 2 + slot 1) / 2 and (nothing + slot 3) / 2
    assert np.array_equal(k.grad, [0.5 * 3.0 + 0.5 * 2.0, 0.5 * 4.0])


def test_mlp_examples():
    x = np.random.default_rng(0).normal(size=(3, 4))
    ident = [Layer(Parameter(np.eye(4), "W"), Parameter(np.zeros(4), "b"))]
    assert np.array_equal(mlp_forward(x, ident).value, x)
    layers = make_mlp([16, 32, 4], RngStream(1), "m")
    assert mlp_forward(np.ones((7, 16)), layers).shape == (7, 4)
    assert layers[0].activation == "relu" and layers[-1].activation is None
    with pytest.raises(DimensionError):
        mlp_forward(np.ones((7, 15)), layers)


@pytest.mark.parametrize("seed", range(10))
def test_mlp_vjp(seed):
    gen = np.random.default_rng(seed)
    layers = make_mlp([5, 7, 3], RngStream(seed), "m", hidden_activation="softplus")
    x = Parameter(gen.normal(size=(4, 5)), "x")
    w = gen.normal(size=(4, 3))
    rep = finite_diff_check(lambda: _dot(mlp_forward(x, layers), w), [x] + mlp_parameters(layers), 1e-5, 1e-5)
    assert rep.passed, str(rep)


def test_glorot_bounds_and_determinism():
    layer = make_layer(10, 6, RngStream(3), "l")
    a = math.sqrt(6.0 / 16)
    assert np.all(np.abs(layer.W.value) <= a) and np.all(layer.b.value == 0)
    assert np.array_equal(layer.W.value, make_layer(10, 6, RngStream(3), "l").W.value)


def test_adamw_examples():
    p = Parameter(np.array([1.5, -2.0]), "p")
    s = AdamWState.for_parameter(p, weight_decay=0.0)
    adamw_step(p, s, 0.1)
    assert np.array_equal(p.value, [1.5, -2.0]) and s.step == 1

    p = Parameter(np.array([0.0]), "p")
    p.grad = np.array([1.0])
    s = AdamWState.for_parameter(p, weight_decay=0.0)
    adamw_step(p, s, 0.1)
    assert abs(p.value[0] + 0.1) < 1e-8
    assert np.array_equal(p.grad, [1.0])  # left for the caller

    p = Parameter(np.array([2.0]), "p")
    s = AdamWState.for_parameter(p, weight_decay=0.01)
    adamw_step(p, s, 1e-4)
    assert p.value[0] == pytest.approx(2.0 * (1 - 1e-6), rel=1e-15)


def test_adamw_rejects_nonfinite():
    p = Parameter(np.zeros(3), "weights.3")
    p.grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(OptimizerError, match="weights.3"):
        adamw_step(p, AdamWState.for_parameter(p), 1e-3)


def test_adamw_matches_reference_loop():
    gen = np.random.default_rng(5)
    p = Parameter(gen.normal(size=4), "p")
    ref, m, v = p.value.copy(), np.zeros(4), np.zeros(4)
    s = AdamWState.for_parameter(p)
    for t in range(1, 6):
        g = gen.normal(size=4)
        p.grad = g
        adamw_step(p, s, 0.01)
        ref = ref * (1 - 0.01 * 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.value, ref, rtol=0, atol=1e-14)


def test_bad_betas():
    with pytest.raises(ValueError):
        AdamWState(np.zeros(1), np.zeros(1), beta1=1.0)


def test_cosine_lr():
    assert cosine_lr(0, 10, 0.3) == 0.3
    assert cosine_lr(10, 10, 0.3) == pytest.approx(0.0, abs=1e-17)
    assert cosine_lr(5, 10, 0.3) == pytest.approx(0.15, rel=1e-15)
    lrs = [cosine_lr(s, 37, 1.0) for s in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    for bad in (-1, 11):
        with pytest.raises(ValueError):
            cosine_lr(bad, 10, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)


def test_rng_streams():
    a = RngStream(42, 7)
    assert np.array_equal(a.generator().random(50), RngStream(42, 7).generator().random(50))
    assert not np.array_equal(a.generator().random(5), RngStream(42, 8).generator().random(5))
    subs = [a.substream(i, lvl).generator().random(4) for i in range(1, 4) for lvl in (1, 2, 3)]
    subs.append(a.generator().random(4))
    assert len({s.tobytes() for s in subs}) == len(subs)
    assert a.substream(0, 2) == a
    nested = a.substream(2, 3).substream(1, 2).substream(5)
    assert nested.counter == 7 + (2 << 192) + (1 << 128) + (5 << 64)
    assert np.all(a.uniform_open(10000) > 0.0)
    with pytest.raises(ValueError):
        a.substream(0, 4)


def test_finite_diff_examples():
    th = Parameter(np.array(3.0), "theta")
    rep = finite_diff_check(lambda: ops.mul(th, th), [th])
    assert rep.passed and abs(th.grad - 6.0) < 1e-12

    def doubled(x):
        return primitive(x.value ** 2, (x,), lambda g: (g * 4.0 * x.value,))

    th = Parameter(np.array([3.0, -1.0]), "theta")
    assert not finite_diff_check(lambda: ops.sum_all(doubled(th)), [th]).passed


def test_finite_diff_detects_nondeterminism():
    gen = np.random.default_rng(0)
    th = Parameter(np.array([1.0]), "theta")
    with pytest.raises(CheckError):
        finite_diff_check(lambda: ops.sum_all(ops.mul(th, gen.normal(size=1))), [th])


def test_tape_accumulates_and_ignores_constants():
    x = Parameter(np.array([1.0, 2.0]), "x")
    c = np.array([3.0, 4.0])
    for _ in range(2):
        with Tape() as tape:
            y = _dot(x, c)
        tape.backward(y)
    assert np.array_equal(x.grad, 2 * c)
    with Tape() as tape:
        z = ops.mul(c, c)
    assert len(tape) == 0 and not z.requires_grad
