import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vision_fsl import ndmath as nd
from vision_fsl.errors import ContractError
from vision_fsl.ndmath.gradcheck import numeric_grad, relative_error

TOL = 1e-4


def check_grads(build, *arrays):
    """build(*values) -> scalar Value; compares analytic and central-difference grads."""
    vals = [nd.Value(a, requires_grad=True) for a in arrays]
    loss = build(*vals)
    loss.backward()
    for v in vals:
        num = numeric_grad(lambda: build(*vals).item(), v.data)
        err = relative_error(v.grad if v.grad is not None else np.zeros_like(v.data), num)
        assert err < TOL, (build, err)


rng = np.random.default_rng(7)
A = rng.standard_normal((3, 4))
B = rng.standard_normal((4, 5))
W = rng.standard_normal((3, 4))


@pytest.mark.parametrize(
    "build,arrays",
    [
        (lambda a, b: (a @ b).sum(), (A, B)),
        (lambda a, b: (a * b).sum(), (A, W)),
        (lambda a, b: (a / (b * b + 1.0)).sum(), (A, W)),
        (lambda a, b: (a + b[0]).mean(), (A, W)),
        (lambda a: (nd.exp(a) * a).sum(), (A,)),
        (lambda a: nd.log(a * a + 0.5).sum(), (A,)),
        (lambda a: (nd.row_softmax(a) * nd.Value(W)).sum(), (A,)),
        (lambda a: (nd.log_softmax(a, axis=0) * nd.Value(W)).sum(), (A,)),
        (lambda a: (nd.layer_norm(a) * nd.Value(W)).sum(), (A,)),
        (lambda a, g: (nd.layer_norm(a, g[0]) * nd.Value(W)).sum(), (A, W)),
        (lambda a: (nd.gelu(a) * nd.Value(W)).sum(), (A,)),
        (lambda a: (nd.tanh(a) * nd.Value(W)).sum(), (A,)),
        (lambda a: (nd.sigmoid(a) * nd.Value(W)).sum(), (A,)),
        (lambda a, b: nd.cosine_rows(a, b).sum(), (A, W)),
        (lambda a, b: (nd.cosine_matrix(a, b.T) * 1.7).sum(), (A, B)),
        (lambda a, b: (nd.concat([a, b], axis=0) * 2.0).sum(), (A, W)),
        (lambda a: (nd.take_rows(a, [0, 2, 2]) * 3.0).sum(), (A,)),
        (lambda a: nd.mean_rows(a * a).sum(), (A,)),
        (lambda a: (nd.clamp(a, -0.5, 0.5) * nd.Value(W)).sum(), (A,)),
        (lambda a: nd.sqrt(a * a + 1.0).sum(), (A,)),
        (lambda a: nd.logsumexp(a, axis=1, mask=np.array([1, 0, 1, 1], bool)).sum(), (A,)),
        (lambda a: (nd.softmax(a, axis=1, mask=np.array([1, 1, 0, 1], bool)) * nd.Value(W)).sum(), (A,)),
        (lambda a, b: (nd.einsum("ij,jk->ik", a, b) * 0.3).sum(), (A, B)),
        (lambda a, b: nd.einsum("ij,ij->i", a, b).sum(), (A, W)),
        (lambda a, b: nd.einsum("ij,kl->ik", a, b).sum(), (A, B)),
        (lambda a: (nd.reshape(a, (4, 3)) @ nd.Value(A)).sum(), (A,)),
        (lambda a: (nd.l2_normalize(a) * nd.Value(W)).sum(), (A,)),
    ],
)
def test_primitive_gradients_match_finite_differences(build, arrays):
    check_grads(build, *[a.copy() for a in arrays])


def test_sum_wx_grad_is_outer_product():
    w = nd.Value(rng.standard_normal((2, 3)), requires_grad=True)
    x = rng.standard_normal((3, 1))
    (w @ nd.Value(x)).sum().backward()
    np.testing.assert_allclose(w.grad, np.tile(x.T, (2, 1)))
    num = numeric_grad(lambda: (w @ nd.Value(x)).sum().item(), w.data)
    assert relative_error(w.grad, num) < TOL


def test_cosine_at_equal_vectors_has_zero_gradient():
    a = nd.Value(np.array([[0.3, -1.2, 2.0]]), requires_grad=True)
    b = nd.Value(a.data.copy())
    nd.cosine_rows(a, b).sum().backward()
    np.testing.assert_allclose(a.grad, 0.0, atol=1e-12)
    num = numeric_grad(lambda: nd.cosine_rows(a, b).item(), a.data)
    np.testing.assert_allclose(num, 0.0, atol=1e-7)


def test_disconnected_parameter_has_zero_grad():
    ps = nd.ParamStore()
    used = ps.add("used", np.ones(3))
    ps.add("unused", np.ones(3))
    (used * 2.0).sum().backward()
    np.testing.assert_array_equal(ps.grad("unused"), np.zeros(3))
    np.testing.assert_array_equal(ps.grad("used"), 2 * np.ones(3))


def test_row_softmax_uniform():
    out = nd.row_softmax(nd.Value(np.zeros((1, 3))))
    np.testing.assert_allclose(out.data, [[1 / 3] * 3])


def test_layer_norm_constant_row_is_zero():
    out = nd.layer_norm(nd.Value(np.full((2, 5), 3.7)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_cosine_self_is_one():
    x = nd.Value(np.array([[1.0, 2.0, -3.0], [0.1, 0.0, 0.0]]))
    np.testing.assert_allclose(nd.cosine_rows(x, x).data, 1.0)


def test_zero_norm_cosine_is_zero_with_zero_grad():
    a = nd.Value(np.zeros((1, 3)), requires_grad=True)
    b = nd.Value(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
    c = nd.cosine_rows(a, b)
    assert c.item() == 0.0
    c.sum().backward()
    np.testing.assert_array_equal(a.grad, 0.0)
    np.testing.assert_array_equal(b.grad, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(xs):
    p = nd.row_softmax(nd.Value(np.array([xs]))).data
    assert abs(p.sum() - 1.0) < 1e-9
    assert (p >= 0).all()


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(4, 5\)"):
        nd.Value(np.ones((2, 3))) @ nd.Value(np.ones((4, 5)))
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(4,\)"):
        nd.Value(np.ones((2, 3))) + nd.Value(np.ones(4))


def test_clamp_rejects_inverted_bounds():
    with pytest.raises(ContractError):
        nd.clamp(nd.Value(1.0), 2.0, 1.0)


def test_backward_requires_scalar():
    v = nd.Value(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (v * 2.0).backward()


def test_second_backward_on_same_graph_rejected():
    v = nd.Value(np.ones(3), requires_grad=True)
    loss = (v * v).sum()
    loss.backward()
    with pytest.raises(ContractError):
        loss.backward()


def test_shared_subexpression_accumulates():
    x = nd.Value(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y * x).sum().backward()
    # d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [2 * 2 + 3 * 4])


def test_no_grad_records_nothing():
    x = nd.Value(np.ones(2), requires_grad=True)
    with nd.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


# optimizer

def reference_adamw(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def test_adamw_three_steps_match_hand_recurrence():
    ps = nd.ParamStore()
    p = ps.add("w", np.array([1.5]))
    st_ = nd.OptimizerState(lr=0.1, weight_decay=0.01, horizon=0)
    grads = [0.5, -1.0, 2.0]
    for g in grads:
        p.grad = np.array([g])
        nd.adamw_step(ps, st_)
    # step 1: m=.05, v=.00025 -> mhat=.5, vhat=.25 -> update = .1*(.5/.5) = .1
    # theta after decay 1.5*(1-.001)=1.4985 -> 1.3985
    assert p.data[0] == pytest.approx(reference_adamw(1.5, grads, 0.1, 0.01), abs=1e-12)
    one = nd.ParamStore()
    q = one.add("w", np.array([1.5]))
    q.grad = np.array([0.5])
    nd.adamw_step(one, nd.OptimizerState(lr=0.1, weight_decay=0.01, horizon=0))
    assert q.data[0] == pytest.approx(1.3985, abs=1e-8)


def test_adamw_zero_grad_zero_decay_is_noop():
    ps = nd.ParamStore()
    p = ps.add("w", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    nd.adamw_step(ps, nd.OptimizerState(weight_decay=0.0))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_zeroes_grads_and_rejects_step_without_backward():
    ps = nd.ParamStore()
    p = ps.add("w", np.ones(2))
    p.grad = np.ones(2)
    opt = nd.OptimizerState()
    nd.adamw_step(ps, opt)
    assert p.grad is None
    with pytest.raises(ContractError):
        nd.adamw_step(ps, opt)


def test_cosine_schedule_endpoints():
    assert nd.cosine_lr(0, 2e-4, 1e-6, 100) == pytest.approx(2e-4)
    assert nd.cosine_lr(100, 2e-4, 1e-6, 100) == pytest.approx(1e-6)
    assert nd.cosine_lr(50, 2e-4, 1e-6, 100) == pytest.approx((2e-4 + 1e-6) / 2)
    opt = nd.OptimizerState(horizon=100)
    opt.step = 100
    assert opt.current_lr() == pytest.approx(opt.lr_floor)


def test_checkpoint_round_trip(tmp_path):
    ps = nd.ParamStore()
    ps.add("a.w", rng.standard_normal((3, 2)))
    ps.add("b", rng.standard_normal(4))
    ps.save(tmp_path / "c.bin", meta={"seed": 3})
    other = nd.ParamStore()
    other.add("a.w", np.zeros((3, 2)))
    other.add("b", np.zeros(4))
    meta = other.load(tmp_path / "c.bin")
    assert meta == {"seed": 3}
    assert other.digest() == ps.digest()
    ps.save(tmp_path / "d.bin", meta={"seed": 3})
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()
