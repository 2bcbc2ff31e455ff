import numpy as np
import pytest

from slfm import autodiff as ad
from slfm.autodiff import Tensor
from slfm.errors import ConfigError, NumericalError, ShapeError

from oracles import conv2d_ref, finite_diff_grad, rel_err

RNG = np.random.default_rng(1234)


def check_unary(op_name, ref_fn, low=-2.0, high=2.0, tol=1e-4, cases=5):
    op = getattr(ad, op_name)
    for _ in range(cases):
        shape = tuple(RNG.integers(1, 5, size=RNG.integers(1, 4)))
        x = RNG.uniform(low, high, size=shape)
        t = Tensor(x, requires_grad=True)
        loss = ad.sum_(op(t))
        loss.backward()
        fd = finite_diff_grad(lambda a: np.sum(ref_fn(a)), x)
        assert rel_err(t.grad, fd) < tol, op_name


def test_sum_of_squares_analytic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = ad.sum_(ad.square(x))
    value = loss.backward()
    assert value == pytest.approx(14.0)
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_unary_gradients_match_finite_differences():
    check_unary("relu", lambda x: np.maximum(x, 0.0))
    check_unary("tanh", np.tanh)
    check_unary("sin", np.sin)
    check_unary("cos", np.cos)
    check_unary("exp", np.exp)
    check_unary("log", np.log, low=0.2, high=3.0)
    check_unary("abs_", np.abs, low=0.1, high=2.0)
    check_unary("square", np.square)
    check_unary("softplus", lambda x: np.logaddexp(0.0, x))
    check_unary("sigmoid", lambda x: 1.0 / (1.0 + np.exp(-x)))


def test_binary_gradients_match_finite_differences():
    for op, ref in [
        (ad.add, lambda a, b: a + b),
        (ad.sub, lambda a, b: a - b),
        (ad.mul, lambda a, b: a * b),
        (ad.div, lambda a, b: a / b),
    ]:
        a = RNG.uniform(0.5, 2.0, size=(3, 4))
        b = RNG.uniform(0.5, 2.0, size=(3, 4))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        ad.sum_(op(ta, tb)).backward()
        fd_a = finite_diff_grad(lambda x: np.sum(ref(x, b)), a)
        fd_b = finite_diff_grad(lambda x: np.sum(ref(a, x)), b)
        assert rel_err(ta.grad, fd_a) < 1e-4
        assert rel_err(tb.grad, fd_b) < 1e-4


def test_broadcast_gradients():
    a = RNG.uniform(-1, 1, size=(4, 3))
    b = RNG.uniform(0.5, 1.5, size=(1, 3))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ad.sum_(ta * tb).backward()
    fd_b = finite_diff_grad(lambda x: np.sum(a * x), b)
    assert rel_err(tb.grad, fd_b) < 1e-4
    assert tb.grad.shape == (1, 3)


def test_matmul_gradients():
    a = RNG.uniform(-1, 1, size=(4, 5))
    b = RNG.uniform(-1, 1, size=(5, 3))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ad.sum_(ad.square(ad.matmul(ta, tb))).backward()
    fd_a = finite_diff_grad(lambda x: np.sum((x @ b) ** 2), a)
    fd_b = finite_diff_grad(lambda x: np.sum((a @ x) ** 2), b)
    assert rel_err(ta.grad, fd_a) < 1e-4
    assert rel_err(tb.grad, fd_b) < 1e-4


def test_conv2d_gradients():
    x = RNG.uniform(-1, 1, size=(1, 1, 8, 8))
    w = RNG.uniform(-1, 1, size=(1, 1, 3, 3))
    tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
    ad.sum_(ad.conv2d(tx, tw)).backward()
    fd_x = finite_diff_grad(lambda a: np.sum(conv2d_ref(a, w)), x)
    fd_w = finite_diff_grad(lambda a: np.sum(conv2d_ref(x, a)), w)
    assert rel_err(tx.grad, fd_x) < 1e-4
    assert rel_err(tw.grad, fd_w) < 1e-4


def test_conv2d_stride_padding_gradients():
    x = RNG.uniform(-1, 1, size=(2, 3, 9, 7))
    w = RNG.uniform(-1, 1, size=(4, 3, 3, 3))
    tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
    ad.sum_(ad.square(ad.conv2d(tx, tw, stride=2, padding=1))).backward()
    fd_x = finite_diff_grad(lambda a: np.sum(conv2d_ref(a, w, 2, 1) ** 2), x)
    fd_w = finite_diff_grad(lambda a: np.sum(conv2d_ref(x, a, 2, 1) ** 2), w)
    assert rel_err(tx.grad, fd_x) < 1e-4
    assert rel_err(tw.grad, fd_w) < 1e-4


def test_shape_mismatch_reports_both_operands():
    with pytest.raises(ShapeError) as err:
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_backward_requires_scalar_root():
    t = Tensor(np.zeros((3,)), requires_grad=True)
    with pytest.raises(ShapeError):
        (t * 2.0).backward()


def test_gradient_accumulation_is_additive():
    x = Tensor([1.0, -2.0], requires_grad=True)
    loss = ad.sum_(ad.square(x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    assert np.array_equal(x.grad, 2.0 * first)


def test_repeated_evaluation_bit_identical():
    x = RNG.uniform(-1, 1, size=(2, 2, 6, 6)).astype(np.float32)
    w = RNG.uniform(-1, 1, size=(3, 2, 3, 3)).astype(np.float32)

    def run():
        tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        loss = ad.mean(ad.square(ad.conv2d(tx, tw, padding=1)))
        loss.backward()
        return loss.data.copy(), tx.grad.copy(), tw.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert np.array_equal(l1, l2) and np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_concat_slice_reshape_upsample_gradients():
    a = RNG.uniform(-1, 1, size=(2, 2, 4, 4))
    b = RNG.uniform(-1, 1, size=(2, 3, 4, 4))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    merged = ad.concat([ta, tb], axis=1)
    up = ad.upsample_nearest2(merged)
    sliced = up[:, 1:4, 2:6, :]
    ad.sum_(ad.square(ad.reshape(sliced, (2, -1)))).backward()

    def ref(x, y):
        m = np.concatenate([x, y], axis=1)
        u = np.repeat(np.repeat(m, 2, axis=2), 2, axis=3)
        return np.sum(u[:, 1:4, 2:6, :] ** 2)

    fd_a = finite_diff_grad(lambda x: ref(x, b), a)
    fd_b = finite_diff_grad(lambda y: ref(a, y), b)
    assert rel_err(ta.grad, fd_a) < 1e-4
    assert rel_err(tb.grad, fd_b) < 1e-4


def test_mean_axis_gradients():
    x = RNG.uniform(-1, 1, size=(3, 4, 5))
    t = Tensor(x, requires_grad=True)
    ad.sum_(ad.square(ad.mean(t, axis=(1, 2)))).backward()
    fd = finite_diff_grad(lambda a: np.sum(np.mean(a, axis=(1, 2)) ** 2), x)
    assert rel_err(t.grad, fd) < 1e-4


def test_adamw_zero_grad_no_decay_keeps_params():
    p = Tensor([1.0, 2.0], requires_grad=True)
    opt = ad.AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros_like(p.data)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adamw_descends_quadratic():
    p = Tensor([1.0], requires_grad=True)
    opt = ad.AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    loss = ad.sum_(ad.square(p))
    loss.backward()
    opt.step()
    assert p.data[0] < 1.0


def test_adamw_decoupled_decay_scaling():
    p = Tensor([2.0], requires_grad=True)
    opt = ad.AdamW({"p": p}, lr=0.1, weight_decay=0.01)
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert p.data[0] == pytest.approx(2.0 * (1.0 - 0.001), rel=1e-6)


def test_adamw_aborts_on_nan_naming_param():
    p = Tensor([1.0], requires_grad=True)
    q = Tensor([1.0], requires_grad=True)
    opt = ad.AdamW({"p": p, "q": q}, lr=0.1)
    p.grad = np.array([np.nan], dtype=np.float32)
    q.grad = np.zeros(1, dtype=np.float32)
    before = p.data.copy()
    with pytest.raises(NumericalError, match="'p'"):
        opt.step()
    assert np.array_equal(p.data, before)
    assert opt.step_count == 0


def test_cosine_lr_endpoints_and_midpoint():
    assert ad.cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert ad.cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert ad.cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2, abs=1e-9)
    values = [ad.cosine_lr(s, 40, 1.0, 0.1) for s in range(41)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(ConfigError):
        ad.cosine_lr(5, 4, 1.0, 0.1)
