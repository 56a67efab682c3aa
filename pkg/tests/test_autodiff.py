import numpy as np
import pytest

import octseg.autodiff as ad
from octseg.autodiff import (NonScalarLoss, ShapeMismatch, Tape, Variable,
                             backward, zero_grads)
from octseg.gradcheck import finite_difference_check


def test_add_componentwise():
    out = ad.add(Variable(np.array([1.0, 2.0])), Variable(np.array([3.0, 4.0])))
    assert np.array_equal(out.value, [4.0, 6.0])


def test_mul_by_zero_scalar_annihilates():
    out = ad.mul(Variable(np.array([1.5, -2.0, 7.0])), 0)
    assert np.array_equal(out.value, np.zeros(3))


def test_mul_gradients_swap_operands():
    a = Variable(np.array([2.0]), requires_grad=True)
    b = Variable(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.mul(a, b))
    tape.backward(loss)
    assert a.grad == pytest.approx([3.0], abs=1e-12)
    assert b.grad == pytest.approx([2.0], abs=1e-12)
    # matches central differences at h=1e-6
    rep = finite_difference_check(
        lambda v: ad.reduce_sum(ad.mul(v, np.array([3.0]))),
        np.array([2.0]), h=1e-6, tol=1e-6)
    assert rep.passed


def test_elementwise_shape_mismatch_rejected():
    with pytest.raises(ShapeMismatch):
        ad.add(Variable(np.zeros(3)), Variable(np.zeros(4)))


def test_reduce_sum_all_and_zeros():
    assert ad.reduce_sum(Variable(np.array([[1.0, 2.0], [3.0, 4.0]]))).item() == 10.0
    assert ad.reduce_sum(Variable(np.zeros((5, 5)))).item() == 0.0


def test_reduce_sum_gradient_is_ones():
    x = Variable(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_reduce_sum_invalid_axis():
    with pytest.raises(ValueError):
        ad.reduce_sum(Variable(np.zeros((2, 2))), axes=(5,))


def test_reduce_sum_partial_axes_backward():
    x = Variable(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
    r = np.arange(8.0).reshape(2, 4)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.mul(ad.reduce_sum(x, axes=(1,)), r))
    tape.backward(loss)
    expected = np.broadcast_to(r[:, None, :], (2, 3, 4))
    assert np.allclose(x.grad, expected)


def test_backward_sum_of_squares():
    x = Variable(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.mul(x, x))
    backward(loss)
    assert x.grad == pytest.approx([2.0, 4.0], abs=1e-12)


def test_backward_variable_used_twice_accumulates():
    x = Variable(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ad.add(ad.reduce_sum(x), ad.reduce_sum(x))
    backward(loss)
    assert np.array_equal(x.grad, 2 * np.ones(3))


def test_backward_three_node_graph_matches_manual_chain_rule():
    # y = x*x; z = y + x; loss = sum(z * c): dL/dx = c*(2x + 1)
    x_val = np.array([0.5, -1.25, 2.0])
    c = np.array([1.0, 2.0, -3.0])
    x = Variable(x_val, requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
        z = ad.add(y, x)
        loss = ad.reduce_sum(ad.mul(z, c))
    backward(loss)
    assert np.allclose(x.grad, c * (2 * x_val + 1), atol=1e-12)


def test_backward_requires_scalar_loss():
    x = Variable(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(NonScalarLoss):
        tape.backward(y)


def test_backward_without_tape_raises():
    x = Variable(np.ones(3), requires_grad=True)
    loss = ad.reduce_sum(x)  # no tape open: nothing recorded
    with pytest.raises(ValueError):
        backward(loss)


def test_unreachable_variable_grad_stays_zero():
    x = Variable(np.ones(2), requires_grad=True)
    y = Variable(np.ones(2), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(x)
        ad.reduce_sum(y)  # recorded but not feeding the loss
    tape.backward(loss)
    assert np.array_equal(y.grad, np.zeros(2))


def test_zero_grads_resets_accumulators():
    x = Variable(np.ones(4), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(x)
    tape.backward(loss)
    zero_grads([x])
    assert np.array_equal(x.grad, np.zeros(4))


def test_scalar_operand_on_either_side():
    x = Variable(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.sub(1.0, ad.div(x, 2.0)))
    backward(loss)
    assert np.allclose(x.grad, [-0.5, -0.5])


def test_division_gradient():
    a = Variable(np.array([3.0]), requires_grad=True)
    b = Variable(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.div(a, b))
    backward(loss)
    assert a.grad == pytest.approx([0.5], abs=1e-12)
    assert b.grad == pytest.approx([-0.75], abs=1e-12)


def test_fd_check_sum_exact_dyadic_inputs():
    # multiples of 2^-10 with h = 2^-20 make every probe exact in float64,
    # so the linear case agrees with central differences to < 1e-10
    rng = np.random.default_rng(3)
    x = rng.integers(-512, 512, size=6).astype(np.float64) / 1024.0
    rep = finite_difference_check(ad.reduce_sum, x, h=2.0 ** -20, tol=1e-10)
    assert rep.passed
    assert rep.max_rel_err < 1e-10


def test_fd_check_requires_float64():
    with pytest.raises(TypeError):
        finite_difference_check(ad.reduce_sum, np.zeros(3, dtype=np.float32))


def test_same_inputs_same_seed_bitwise_identical():
    def run():
        rng = np.random.default_rng(11)
        x = Variable(rng.normal(size=(4, 5)), requires_grad=True)
        c = rng.normal(size=(4, 5))
        with Tape() as tape:
            loss = ad.reduce_sum(ad.mul(ad.add(ad.mul(x, x), x), c))
        tape.backward(loss)
        return loss.item(), x.grad.copy()

    loss1, grad1 = run()
    loss2, grad2 = run()
    assert loss1 == loss2
    assert np.array_equal(grad1, grad2)


def test_variable_grad_shape_matches_value():
    x = Variable(np.zeros((2, 3)), requires_grad=True)
    assert x.grad.shape == (2, 3)
    assert x.grad.dtype == x.value.dtype


def test_non_float_input_coerced_to_float32():
    x = Variable(np.array([1, 2, 3]))
    assert x.value.dtype == np.float32
