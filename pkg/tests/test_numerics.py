import math
import os
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rxnvae.errors import NonFiniteError, SchemaError, ShapeError, TapeError
from rxnvae.numerics import (
    AdamState,
    GRUWeights,
    ParamStore,
    Tape,
    Tensor,
    adam_step,
    add,
    add_n,
    backward,
    bce_with_logits,
    clip_grad_norm,
    concat,
    constant,
    cross_entropy,
    dot,
    exp,
    gru_cell,
    kl_diag_gaussian,
    linear,
    load_checkpoint,
    load_checkpoint_f32,
    log_softmax,
    matvec,
    mul,
    no_grad,
    relu,
    save_checkpoint,
    sigmoid,
    softmax,
    stack,
    tanh,
    total,
    transpose,
)

from .gradcheck import max_rel_error

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def param(arr):
    return Tensor(arr, requires_grad=True)


def random_gru(rng, n, h):
    store = ParamStore()
    return GRUWeights.create(store, "g", n, h, rng)


# ---------------------------------------------------------------- linear

def test_linear_identity_returns_input():
    x = constant([1.5, -2.0, 3.25])
    out = linear(constant(np.eye(3)), constant(np.zeros(3)), x)
    assert_array_equal(out.data, x.data)


def test_linear_zero_weight_returns_bias():
    b = constant([0.1, 0.2])
    out = linear(constant(np.zeros((2, 3))), b, constant([4.0, 5.0, 6.0]))
    assert_array_equal(out.data, b.data)


def test_linear_matches_explicit_loops():
    rng = np.random.default_rng(5)
    W, b, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=3)
    expected = [sum(W[i, j] * x[j] for j in range(3)) + b[i] for i in range(4)]
    assert_allclose(linear(constant(W), constant(b), constant(x)).data, expected, rtol=1e-12)


def test_linear_shape_mismatch():
    with pytest.raises(ShapeError):
        linear(constant(np.zeros((2, 3))), None, constant(np.zeros(4)))


# ---------------------------------------------------------------- gru

def test_gru_zero_weights_halves_state():
    n, h = 3, 4
    w = GRUWeights(*(constant(np.zeros((h, n + h))) if i % 2 == 0 else constant(np.zeros(h)) for i in range(6)))
    state = constant([1.0, -2.0, 0.5, 4.0])
    out = gru_cell(w, constant(np.ones(n)), state)
    assert_allclose(out.data, 0.5 * state.data, rtol=1e-15)


def _scalar_gru(w, x, h):
    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    xh = list(x) + list(h)
    hd = len(h)
    z = [sig(sum(w.W_z.data[i, j] * xh[j] for j in range(len(xh))) + w.b_z.data[i]) for i in range(hd)]
    r = [sig(sum(w.W_r.data[i, j] * xh[j] for j in range(len(xh))) + w.b_r.data[i]) for i in range(hd)]
    xrh = list(x) + [r[i] * h[i] for i in range(hd)]
    ht = [math.tanh(sum(w.W_h.data[i, j] * xrh[j] for j in range(len(xrh))) + w.b_h.data[i]) for i in range(hd)]
    return [(1 - z[i]) * h[i] + z[i] * ht[i] for i in range(hd)]


def test_gru_matches_scalar_reference():
    rng = np.random.default_rng(11)
    w = random_gru(rng, 3, 5)
    x, h = rng.normal(size=3), rng.normal(size=5)
    out = gru_cell(w, constant(x), constant(h))
    assert_allclose(out.data, _scalar_gru(w, x, h), rtol=0, atol=1e-12)


# ---------------------------------------------------------------- softmax family

def test_softmax_uniform():
    assert_allclose(softmax(constant(np.zeros(4))).data, np.full(4, 0.25))


def test_softmax_large_logits_stay_finite():
    out = softmax(constant([1000.0, 0.0]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == pytest.approx(1.0)
    assert out.data[1] < 1e-300 or out.data[1] == 0.0


def test_softmax_matches_high_precision_reference():
    getcontext().prec = 50
    rng = np.random.default_rng(2)
    v = rng.normal(scale=5.0, size=7)
    exps = [Decimal(float(a)).exp() for a in v]
    s = sum(exps)
    reference = [float(e / s) for e in exps]
    assert_allclose(softmax(constant(v)).data, reference, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_softmax_permutation_equivariant(values, rnd):
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    a = softmax(constant(values)).data
    b = softmax(constant([values[i] for i in perm])).data
    assert_allclose(b, a[perm], rtol=1e-12, atol=1e-300)


def test_cross_entropy_uniform_is_log_k():
    assert cross_entropy(constant(np.zeros(4)), 2).item() == pytest.approx(math.log(4), rel=1e-12)


def test_cross_entropy_confident_correct_is_small():
    assert cross_entropy(constant([10.0, -10.0]), 0).item() <= 1e-4


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(constant([0.0, 1.0]), 2)


# ---------------------------------------------------------------- kl

def test_kl_zero_at_prior():
    assert kl_diag_gaussian(constant(np.zeros(5)), constant(np.zeros(5))).item() == 0.0


def test_kl_unit_mean():
    assert kl_diag_gaussian(constant([1.0]), constant([0.0])).item() == pytest.approx(0.5, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6))
def test_kl_nonnegative(pairs):
    mu = constant([p[0] for p in pairs])
    logvar = constant([p[1] for p in pairs])
    assert kl_diag_gaussian(mu, logvar).item() >= 0.0


# ---------------------------------------------------------------- tape / backward

def test_backward_of_summed_linear_is_outer_product():
    x = np.array([1.0, 2.0, -3.0])
    W = param(np.ones((2, 3)))
    tape = Tape()
    with tape.recording():
        loss = total(matvec(W, constant(x)))
        backward(loss, tape)
    assert_allclose(W.grad, np.outer(np.ones(2), x))


def test_backward_on_constant_loss_is_noop():
    W = param(np.ones((2, 2)))
    tape = Tape()
    with tape.recording():
        backward(total(constant(np.ones(3))), tape)
    assert W.grad is None


def test_backward_needs_scalar():
    W = param(np.ones((2, 2)))
    tape = Tape()
    with tape.recording():
        out = matvec(W, constant([1.0, 1.0]))
        with pytest.raises(TapeError):
            backward(out, tape)


def test_backward_twice_without_new_forward_fails():
    W = param(np.ones((2, 2)))
    tape = Tape()
    with tape.recording():
        loss = total(matvec(W, constant([1.0, 1.0])))
        backward(loss, tape)
        with pytest.raises(TapeError):
            backward(loss, tape)


def test_no_grad_records_nothing():
    W = param(np.ones((2, 2)))
    tape = Tape()
    with tape.recording():
        with no_grad():
            out = total(matvec(W, constant([1.0, 1.0])))
    assert len(tape) == 0
    assert not out.requires_grad


def test_non_finite_result_raises():
    with pytest.raises(NonFiniteError):
        exp(constant([1000.0]))


def test_gradient_accumulates_over_reuse():
    a = param([2.0])
    tape = Tape()
    with tape.recording():
        loss = total(add(mul(a, a), a))
        backward(loss, tape)
    assert_allclose(a.grad, [5.0])


# ---------------------------------------------------------------- finite-difference checks

def _composite(seed):
    rng = np.random.default_rng(seed)
    n, h, k = 3, 4, 5
    gru = random_gru(rng, n, h)
    W, b = param(rng.normal(size=(k, h))), param(rng.normal(size=k))
    x, s = param(rng.normal(size=n)), param(rng.normal(size=h))
    target = int(rng.integers(k))

    def loss():
        h1 = gru_cell(gru, x, s)
        h2 = gru_cell(gru, tanh(x), h1)
        return cross_entropy(linear(W, b, h2), target)

    params = [W, b, x, s, gru.W_z, gru.b_z, gru.W_r, gru.b_r, gru.W_h, gru.b_h]
    return loss, params


@pytest.mark.parametrize("seed", range(20))
def test_gru_linear_cross_entropy_gradients(seed):
    loss, params = _composite(seed)
    assert max_rel_error(loss, params) <= 1e-4


def _elementwise_cases(rng):
    a, b = param(rng.normal(size=4)), param(rng.normal(size=4))
    c = constant(rng.normal(size=4))
    q = param(rng.normal(size=4))
    return {
        "sigmoid_relu": (lambda: dot(sigmoid(a), relu(b)), [a, b]),
        "softmax": (lambda: dot(softmax(a), c), [a]),
        "log_softmax": (lambda: dot(log_softmax(mul(a, b)), c), [a, b]),
        "exp_concat": (lambda: total(exp(concat([a, tanh(b)]))), [a, b]),
        "kl": (lambda: kl_diag_gaussian(a, scale_down(b)), [a, b]),
        "attention": (lambda: total(matvec(transpose(stack([a, b, q])),
                                           softmax(matvec(stack([a, b, q]), c)))), [a, b, q]),
        "add_n": (lambda: dot(add_n([a, b, mul(a, b)]), c), [a, b]),
    }


def scale_down(t):
    return mul(t, constant(np.full(t.shape, 0.5)))


@pytest.mark.parametrize("case", ["sigmoid_relu", "softmax", "log_softmax", "exp_concat", "kl", "attention", "add_n"])
@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients(case, seed):
    loss, params = _elementwise_cases(np.random.default_rng(100 + seed))[case]
    assert max_rel_error(loss, params) <= 1e-4


@pytest.mark.parametrize("target", [0.0, 1.0])
def test_bce_gradient(target):
    rng = np.random.default_rng(3)
    w = param(rng.normal(size=(1, 4)))
    x = constant(rng.normal(size=4))
    assert max_rel_error(lambda: bce_with_logits(linear(w, None, x), target), [w]) <= 1e-4


# ---------------------------------------------------------------- determinism

def test_forward_backward_bit_identical():
    grads = []
    for _ in range(2):
        loss, params = _composite(7)
        tape = Tape()
        with tape.recording():
            value = loss()
            backward(value, tape)
        grads.append((value.item(), [p.grad.copy() for p in params]))
    assert grads[0][0] == grads[1][0]
    for g0, g1 in zip(grads[0][1], grads[1][1]):
        assert_array_equal(g0, g1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_add_n_is_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a = add_n([constant(r) for r in rows]).data
    b = add_n([constant(r) for r in shuffled]).data
    assert_array_equal(a, b)


# ---------------------------------------------------------------- optimizer

def test_adam_first_step_moves_by_lr_against_gradient():
    p = param([1.0, -1.0, 2.0])
    p.grad = np.array([0.5, -3.0, 1e-3])
    adam_step(AdamState(lr=0.01), [p])
    assert_allclose(p.data, [0.99, -0.99, 1.99], rtol=0, atol=1e-6)


def test_adam_zero_gradient_leaves_params():
    p = param([1.0, 2.0])
    p.zero_grad()
    adam_step(AdamState(lr=0.1), [p])
    assert_array_equal(p.data, [1.0, 2.0])


def test_adam_missing_gradient_is_an_error():
    with pytest.raises(TapeError):
        adam_step(AdamState(), [param([1.0])])


def test_adam_decreases_quadratic_every_step():
    p = param([1.0, -0.5])
    state = AdamState(lr=0.001)
    last = float(np.sum(p.data ** 2))
    for _ in range(100):
        p.grad = 2.0 * p.data
        adam_step(state, [p])
        now = float(np.sum(p.data ** 2))
        assert now < last
        last = now


def test_clip_grad_norm_scales_to_max():
    p = param([0.0, 0.0])
    p.grad = np.array([30.0, 40.0])
    norm = clip_grad_norm([p], 10.0)
    assert norm == pytest.approx(50.0)
    assert_allclose(p.grad, [6.0, 8.0])


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_f32_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    tensors = {"jt.W0": rng.normal(size=(3, 5)), "rxn.b": rng.normal(size=7), "scalar": np.array(2.5)}
    path = os.path.join(tmp_path, "m.ckpt")
    save_checkpoint(path, tensors)
    f32 = load_checkpoint_f32(path)
    f64 = load_checkpoint(path)
    assert list(f32) == list(tensors)
    for name, arr in tensors.items():
        assert_array_equal(f32[name], arr.astype(np.float32))
        assert f64[name].dtype == np.float64
        assert_allclose(f64[name], arr, rtol=1e-6, atol=1e-30)


def test_truncated_checkpoint_is_schema_error(tmp_path):
    path = os.path.join(tmp_path, "m.ckpt")
    save_checkpoint(path, {"w": np.ones((4, 4))})
    with open(path, "rb") as f:
        data = f.read()
    with open(path, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(SchemaError):
        load_checkpoint(path)


def test_checkpoint_without_header_is_schema_error(tmp_path):
    path = os.path.join(tmp_path, "m.ckpt")
    with open(path, "wb") as f:
        f.write(b"garbage")
    with pytest.raises(SchemaError):
        load_checkpoint(path)
