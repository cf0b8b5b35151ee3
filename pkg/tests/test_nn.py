import numpy as np
import pytest

from motionspace import nn
from motionspace.errors import NonFiniteGradient, ShapeMismatch, StaleTape

from util import finite_diff_array, rel_err


def make_store(widths, seed=0):
    store = nn.ParamStore()
    nn.init_mlp(store, "net", widths, np.random.default_rng(seed))
    return store


def test_identity_layer_passthrough():
    store = nn.ParamStore()
    store.add("net.W0", np.eye(3))
    store.add("net.b0", np.zeros(3))
    x = np.array([0.5, -2.0, 3.0])
    y, _ = nn.mlp_forward(store, x, [3, 3], "net")
    assert np.array_equal(y, x)


def test_relu_in_chain():
    store = nn.ParamStore()
    store.add("net.W0", np.eye(2))
    store.add("net.b0", np.zeros(2))
    store.add("net.W1", np.eye(2))
    store.add("net.b1", np.zeros(2))
    y, _ = nn.mlp_forward(store, np.array([-1.0, 2.0]), [2, 2, 2], "net")
    assert np.array_equal(y, [0.0, 2.0])


def test_two_fixed_layers_hand_computed():
    # Hand computation: h = relu(W0 x + b0), y = W1 h + b1.
    w0 = np.array([[1.0, 2.0], [-3.0, 0.5]])
    b0 = np.array([0.1, -0.2])
    w1 = np.array([[2.0, -1.0], [0.0, 1.0]])
    b1 = np.array([1.0, 1.0])
    store = nn.ParamStore()
    store.add("net.W0", w0)
    store.add("net.b0", b0)
    store.add("net.W1", w1)
    store.add("net.b1", b1)
    x = np.array([1.0, 1.0])
    h = np.maximum(w0 @ x + b0, 0.0)  # (3.1, 0.0)
    expected = w1 @ h + b1  # (7.2, 1.0)
    y, _ = nn.mlp_forward(store, x, [2, 2, 2], "net")
    assert np.allclose(y, expected)
    assert np.allclose(y, [7.2, 1.0])


def test_backward_zero_upstream():
    store = make_store([4, 8, 3], seed=1)
    y, tape = nn.mlp_forward(store, np.ones(4), [4, 8, 3], "net")
    gx = nn.mlp_backward(store, tape, np.zeros(3))
    assert np.allclose(gx, 0.0)
    for g in store.grads.values():
        assert np.allclose(g, 0.0)


def test_single_linear_layer_outer_product():
    store = nn.ParamStore()
    store.add("net.W0", np.zeros((3, 2)))
    store.add("net.b0", np.zeros(3))
    x = np.array([2.0, -1.0])
    up = np.array([1.0, 0.5, -2.0])
    _, tape = nn.mlp_forward(store, x, [2, 3], "net")
    nn.mlp_backward(store, tape, up)
    assert np.allclose(store.grads["net.W0"], np.outer(up, x))
    assert np.allclose(store.grads["net.b0"], up)


def test_backward_matches_finite_differences():
    widths = [5, 7, 6, 2]
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(20):
        store = make_store(widths, seed=trial)
        x = rng.standard_normal(5)
        up = rng.standard_normal(2)

        def scalar():
            y, _ = nn.mlp_forward(store, x, widths, "net")
            return float(y @ up)

        _, tape = nn.mlp_forward(store, x, widths, "net")
        nn.mlp_backward(store, tape, up)
        analytic = {k: v.copy() for k, v in store.grads.items()}
        for name in store.params:
            fd = finite_diff_array(
                lambda arr, n=name: _eval_with(store, n, arr, scalar),
                store.params[name],
                h=1e-5,
            )
            worst = max(worst, rel_err(analytic[name], fd))
    assert worst < 1e-4


def _eval_with(store, name, arr, scalar):
    old = store.params[name]
    store.params[name] = arr
    try:
        return scalar()
    finally:
        store.params[name] = old


def test_grad_x_matches_finite_differences():
    widths = [4, 6, 3]
    store = make_store(widths, seed=9)
    rng = np.random.default_rng(8)
    x = rng.standard_normal(4)
    up = rng.standard_normal(3)
    _, tape = nn.mlp_forward(store, x, widths, "net")
    gx = nn.mlp_backward(store, tape, up)

    def scalar(xv):
        y, _ = nn.mlp_forward(store, xv, widths, "net")
        return float(y @ up)

    fd = finite_diff_array(scalar, x, h=1e-6)
    assert rel_err(gx, fd) < 1e-4


def test_batched_forward_backward_consistent_with_loop():
    widths = [3, 5, 2]
    store = make_store(widths, seed=3)
    rng = np.random.default_rng(4)
    xs = rng.standard_normal((6, 3))
    ups = rng.standard_normal((6, 2))
    y_batch, tape = nn.mlp_forward(store, xs, widths, "net")
    gx_batch = nn.mlp_backward(store, tape, ups)
    batch_grads = {k: v.copy() for k, v in store.grads.items()}
    store.zero_grads()
    for i in range(6):
        y_i, tape_i = nn.mlp_forward(store, xs[i], widths, "net")
        gx_i = nn.mlp_backward(store, tape_i, ups[i])
        assert np.allclose(y_batch[i], y_i)
        assert np.allclose(gx_batch[i], gx_i)
    for k in store.grads:
        assert np.allclose(batch_grads[k], store.grads[k])


def test_shape_mismatch():
    store = make_store([4, 3], seed=0)
    with pytest.raises(ShapeMismatch):
        nn.mlp_forward(store, np.ones(5), [4, 3], "net")


def test_stale_tape():
    store = make_store([2, 2], seed=0)
    _, tape = nn.mlp_forward(store, np.ones(2), [2, 2], "net")
    state = nn.AdamState(lr=0.1)
    store.grads["net.W0"] += 1.0
    nn.adam_step(store, state)
    with pytest.raises(StaleTape):
        nn.mlp_backward(store, tape, np.ones(2))


def test_adam_zero_gradient_no_change():
    store = make_store([3, 3], seed=5)
    before = {k: v.copy() for k, v in store.params.items()}
    nn.adam_step(store, nn.AdamState(lr=0.1))
    for k, v in store.params.items():
        assert np.array_equal(before[k], v)


def test_adam_first_step_formula():
    # One scalar parameter with gradient g: the bias-corrected first step
    # moves by exactly -lr * g / (|g| + eps).
    store = nn.ParamStore()
    store.add("w", np.array([2.0]))
    g = 0.37
    store.grads["w"][0] = g
    lr, eps = 0.01, 1e-8
    nn.adam_step(store, nn.AdamState(lr=lr, eps=eps))
    expected = 2.0 - lr * g / (np.sqrt(g * g) + eps)
    assert abs(store.params["w"][0] - expected) < 1e-15


def test_adam_converges_on_quadratic():
    store = nn.ParamStore()
    store.add("w", np.array([0.0]))
    state = nn.AdamState(lr=0.1)
    for _ in range(200):
        w = store.params["w"][0]
        store.grads["w"][0] = 2.0 * (w - 3.0)
        nn.adam_step(store, state)
    assert abs(store.params["w"][0] - 3.0) < 0.05


def test_adam_nonfinite_gradient_names_parameter():
    store = make_store([2, 2], seed=0)
    store.grads["net.b0"][0] = np.nan
    with pytest.raises(NonFiniteGradient, match="net.b0"):
        nn.adam_step(store, nn.AdamState())


def test_finite_diff_check_quadratic_exact():
    store = nn.ParamStore()
    store.add("w", np.array([1.0, -2.0, 0.5]))

    def f():
        return float(np.sum(store.params["w"] ** 2))

    store.grads["w"][:] = 2.0 * store.params["w"]
    report = nn.finite_diff_check(f, store, h=1e-5, tol=1e-6)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_finite_diff_check_constant_function():
    store = nn.ParamStore()
    store.add("w", np.array([1.0, 2.0]))
    report = nn.finite_diff_check(lambda: 5.0, store, tol=1e-4)
    assert report.passed


def test_finite_diff_check_flags_wrong_gradient():
    store = nn.ParamStore()
    store.add("w", np.array([1.0]))

    def f():
        return float(store.params["w"][0] ** 2)

    store.grads["w"][0] = 0.0  # wrong on purpose
    report = nn.finite_diff_check(f, store, tol=1e-4)
    assert not report.passed
    assert report.worst_param == "w"


def test_pack_unpack_round_trip():
    store = make_store([3, 4, 2], seed=6)
    blob = store.pack()
    clone = make_store([3, 4, 2], seed=99)
    clone.unpack(blob)
    for k in store.params:
        assert np.array_equal(store.params[k], clone.params[k])


def test_deterministic_init():
    a = make_store([4, 4], seed=123)
    b = make_store([4, 4], seed=123)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
