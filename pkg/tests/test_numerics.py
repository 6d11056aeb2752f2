from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sttrid.gradcheck_suite import PRIMITIVE_TOL, registered_checks
from sttrid.numerics import (
    ContractError, Parameter, ShapeError, Tape, Tensor, adam, adam_step, finite_difference_check,
    lr_schedule, ops, sgd_momentum, sgd_momentum_step,
)
from sttrid.numerics.tensor import record

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_and_hand_product():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ops.matmul(np.eye(2), x).data, x)
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        ops.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((3, 2))
    err = finite_difference_check(lambda a, b: ops.sum(ops.mul(ops.matmul(a, b), r)),
                                  [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
    assert err < 1e-6


def test_batched_matmul_broadcast_gradcheck():
    rng = np.random.default_rng(1)
    r = rng.standard_normal((2, 3, 5))
    err = finite_difference_check(lambda a, b: ops.sum(ops.mul(ops.matmul(a, b), r)),
                                  [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))])
    assert err < 1e-6


# -- softmax / cross entropy ------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax_rows(np.zeros((1, 4))).data, [[0.25] * 4], atol=0)
    out = ops.softmax_rows(np.array([[1000.0, 1000.0]])).data
    np.testing.assert_array_equal(out, [[0.5, 0.5]])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    y = ops.softmax_rows(x).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(ops.softmax_rows(x + c).data, y, atol=1e-9)


def test_softmax_gradcheck():
    rng = np.random.default_rng(2)
    r = rng.standard_normal((2, 5))
    assert finite_difference_check(lambda x: ops.sum(ops.mul(ops.softmax_rows(x), r)), [rng.standard_normal((2, 5))]) < 1e-6


def test_cross_entropy_uniform_is_ln_k():
    loss = ops.cross_entropy(np.zeros((3, 114)), np.array([0, 5, 113])).item()
    assert abs(loss - math.log(114)) < 1e-12
    assert abs(math.log(114) - 4.7362) < 1e-4


def test_cross_entropy_confident_prediction():
    logits = np.zeros((2, 5))
    labels = np.array([1, 3])
    logits[np.arange(2), labels] = 100.0
    assert ops.cross_entropy(logits, labels).item() < 1e-10


def test_cross_entropy_gradcheck_and_label_range():
    rng = np.random.default_rng(3)
    labels = np.array([0, 4, 2, 2])
    assert finite_difference_check(lambda x: ops.cross_entropy(x, labels), [rng.standard_normal((4, 5))]) < 1e-6
    with pytest.raises(ContractError):
        ops.cross_entropy(np.zeros((1, 3)), np.array([3]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite), st.lists(st.integers(0, 5), min_size=4, max_size=4))
def test_cross_entropy_non_negative(x, labels):
    assert ops.cross_entropy(x, np.array(labels)).item() >= 0.0


# -- relu / dropout / batch norm / linear -----------------------------------

def test_relu_values():
    np.testing.assert_array_equal(ops.relu(np.array([-3.0, 3.0])).data, [0.0, 3.0])


def test_dropout_p_zero_is_identity_in_both_modes():
    x = np.random.default_rng(4).standard_normal((5, 7))
    for training in (True, False):
        np.testing.assert_array_equal(ops.dropout(x, 0.0, training, seed=1).data, x)


def test_dropout_eval_identity_and_train_mean_preserved():
    x = np.full((100, 100), 3.0)
    np.testing.assert_array_equal(ops.dropout(x, 0.2, False).data, x)
    out = ops.dropout(x, 0.2, True, seed=(7, 0, 0)).data
    assert abs(out.mean() - 3.0) / 3.0 < 0.02
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 3.0 / 0.8)


def test_dropout_mask_reproducible_by_seed():
    a = ops.dropout_mask((4, 6), 0.5, (1, 2, 3))
    np.testing.assert_array_equal(a, ops.dropout_mask((4, 6), 0.5, (1, 2, 3)))
    assert not np.array_equal(a, ops.dropout_mask((4, 6), 0.5, (1, 2, 4)))
    with pytest.raises(ContractError):
        ops.dropout(np.ones(3), 1.0, True)


def test_batch_norm_training_statistics():
    # tiny eps isolates the normalization; default eps slightly shrinks the variance
    x = np.random.default_rng(5).standard_normal((32, 8)) * 3.0 + 2.0
    out = ops.batch_norm(x, np.ones(8), np.zeros(8), np.zeros(8), np.ones(8), training=True, eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)


def test_batch_norm_running_stats_and_eval_mode():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((10, 3, 4, 2))
    rm, rv = np.zeros(3), np.ones(3)
    ops.batch_norm(x, np.ones(3), np.zeros(3), rm, rv, training=True, momentum=0.1)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    n = x.size // 3
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))
    out = ops.batch_norm(x, np.full(3, 2.0), np.ones(3), rm, rv, training=False, eps=1e-5).data
    expect = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5) * 2.0 + 1.0
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_batch_norm_rejects_single_example_batch():
    with pytest.raises(ContractError):
        ops.batch_norm(np.ones((1, 4)), np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), training=True)


def test_linear_matches_affine_map():
    rng = np.random.default_rng(7)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal(5)
    np.testing.assert_allclose(ops.linear(x, w, b).data, x @ w.T + b, rtol=1e-13)


# -- l2 normalize -----------------------------------------------------------

def test_l2_normalize_examples():
    np.testing.assert_allclose(ops.l2_normalize(np.array([3.0, 4.0]), axis=0).data, [0.6, 0.8], atol=1e-15)
    u = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(ops.l2_normalize(u, axis=0).data, u, atol=1e-12)
    np.testing.assert_array_equal(ops.l2_normalize(np.zeros((2, 3))).data, 0.0)


def test_l2_normalize_gradcheck():
    rng = np.random.default_rng(8)
    r = rng.standard_normal(6)
    assert finite_difference_check(lambda x: ops.sum(ops.mul(ops.l2_normalize(x, axis=0), r)),
                                   [rng.standard_normal(6)]) < 1e-5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-1e3, 1e3)))
def test_l2_normalize_unit_rows(x):
    y = ops.l2_normalize(x).data
    norms = np.linalg.norm(y, axis=1)
    live = np.linalg.norm(x, axis=1) > 1e-12
    np.testing.assert_allclose(norms[live], 1.0, atol=1e-9)


# -- tape semantics ---------------------------------------------------------

def test_backward_sum_gives_ones():
    p = Parameter(np.arange(4.0))
    with Tape() as tape:
        loss = ops.sum(p)
    tape.backward(loss)
    np.testing.assert_array_equal(p.grad, 1.0)


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(9)
    w = Parameter(rng.standard_normal((3, 4)))
    x = rng.standard_normal((5, 4))
    labels = np.array([0, 1, 2, 1, 0])
    with Tape() as tape:
        loss = ops.cross_entropy(ops.linear(x, w), labels)
    tape.backward(loss)
    once = w.grad.copy()
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_linear_cross_entropy_gradcheck():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((5, 4))
    labels = np.array([0, 1, 2, 1, 0])
    err = finite_difference_check(lambda w, b: ops.cross_entropy(ops.linear(x, w, b), labels),
                                  [rng.standard_normal((3, 4)), rng.standard_normal(3)])
    assert err < 1e-5


def test_unreachable_parameter_keeps_zero_gradient():
    p, q = Parameter(np.ones(3)), Parameter(np.ones(3))
    with Tape() as tape:
        loss = ops.sum(ops.mul(p, 2.0))
        ops.sum(q)
    tape.backward(loss)
    np.testing.assert_array_equal(q.grad, 0.0)
    np.testing.assert_array_equal(p.grad, 2.0)


def test_non_scalar_loss_is_contract_error():
    p = Parameter(np.ones(3))
    with Tape() as tape:
        out = ops.mul(p, 2.0)
    with pytest.raises(ContractError):
        tape.backward(out)


def test_tape_visits_each_record_once_in_reverse():
    p = Parameter(np.array(2.0))
    visits = []

    def traced(x, tag):
        return record(x.data * 1.0, (x,), lambda g: (visits.append(tag) or g,))

    with Tape() as tape:
        y = traced(traced(traced(p, "a"), "b"), "c")
    tape.backward(y)
    assert visits == ["c", "b", "a"]


# -- finite differences -----------------------------------------------------

def test_gradcheck_sum_of_squares():
    assert finite_difference_check(lambda x: ops.sum(ops.mul(x, x)), [np.array([1.0, 2.0])]) < 1e-9


def test_gradcheck_detects_wrong_backward_rule():
    def bad_square(x):
        return record(x.data ** 2, (x,), lambda g: (g * x.data,))   # missing factor 2

    assert finite_difference_check(lambda x: ops.sum(bad_square(x)), [np.array([1.0, -2.0, 0.5])]) > 1e-2


PRIMITIVE_CHECKS = {name: fn for name, kind, _, fn in registered_checks() if kind == "primitive"}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CHECKS))
def test_registered_primitive_gradchecks(name):
    assert PRIMITIVE_CHECKS[name]() < PRIMITIVE_TOL


# -- optimizers -------------------------------------------------------------

def _param(value, grad):
    p = Parameter(np.array(value, dtype=float), name="theta")
    p.grad[...] = grad
    return p


def test_sgd_single_step():
    p = _param([0.0], [1.0])
    state = sgd_momentum(0.1, 0.0, momentum=0.0)
    sgd_momentum_step(state, [p])
    np.testing.assert_allclose(p.data, [-0.1], rtol=0, atol=1e-16)


def test_sgd_weight_decay_only():
    theta = np.array([1.0, -3.0, 250.0])
    p = _param(theta, 0.0)
    sgd_momentum_step(sgd_momentum(0.01, 1e-4), [p])
    np.testing.assert_allclose(p.data, theta * (1 - 1e-6), rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 1.0), arrays(np.float64, 5, elements=st.floats(1e-3, 1e3)),
       arrays(np.bool_, 5))
def test_adam_first_step_size_is_lr(lr, mag, neg):
    grad = np.where(neg, -mag, mag)
    p = _param(np.zeros(5), grad)
    adam_step(adam(lr, 0.0), [p])
    np.testing.assert_allclose(np.abs(p.data), lr, rtol=1e-5)
    assert np.all(np.sign(p.data) == -np.sign(grad))


def test_adam_two_steps_match_closed_form():
    p = _param([1.0], [0.5])
    state = adam(0.01, 1e-4)
    adam_step(state, [p])
    theta1 = p.data.copy()
    p.grad[...] = -0.25
    adam_step(state, [p])
    # independent re-derivation
    b1, b2, eps = 0.9, 0.999, 1e-8
    g1 = 0.5 + 1e-4 * 1.0
    m, v = (1 - b1) * g1, (1 - b2) * g1 ** 2
    t1 = 1.0 - 0.01 * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
    g2 = -0.25 + 1e-4 * t1
    m, v = b1 * m + (1 - b1) * g2, b2 * v + (1 - b2) * g2 ** 2
    t2 = t1 - 0.01 * (m / (1 - b1 ** 2)) / (math.sqrt(v / (1 - b2 ** 2)) + eps)
    assert theta1[0] == pytest.approx(t1, abs=1e-15)
    assert p.data[0] == pytest.approx(t2, abs=1e-15)


def test_optimizer_is_deterministic():
    rng = np.random.default_rng(11)
    init, grads = rng.standard_normal(4), rng.standard_normal((3, 4))
    results = []
    for _ in range(2):
        p = _param(init, 0.0)
        state = adam()
        for g in grads:
            p.grad[...] = g
            adam_step(state, [p])
        results.append(p.data.copy())
    np.testing.assert_array_equal(*results)


def test_lr_schedule_milestones():
    assert lr_schedule(0) == 1.0
    assert lr_schedule(59) == 1.0
    assert lr_schedule(60) == 0.1
    assert lr_schedule(89) == 0.1
    assert lr_schedule(90) == 0.01
    assert lr_schedule(119) == 0.01
    with pytest.raises(ValueError):
        lr_schedule(120)
    assert lr_schedule(0, 1) == 1.0
    assert [lr_schedule(e, 4) for e in range(4)] == [1.0, 1.0, 0.1, 0.01]
