"""Gradient-oracle tests for the autodiff core: every primitive against
central finite differences, plus the stop-gradient contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addlab import autodiff
from addlab.autodiff import (
    OPS,
    BackwardBeforeForward,
    GradCheckReport,
    Graph,
    GraphError,
    NonFiniteError,
    ShapeError,
    grad_check,
)


def build_op_graph(op: str, rng):
    """Graph exercising one primitive with a parameter so it can be checked."""
    g = Graph()
    w = g.param("w", rng.normal(size=(3, 4)) * 0.7)
    if op == "add":
        out = g.add(w, g.const(rng.normal(size=(4,))))
    elif op == "mul":
        out = g.mul(w, g.const(rng.normal(size=(3, 4))))
    elif op == "matmul":
        out = g.matmul(w, g.const(rng.normal(size=(4, 2))))
    elif op == "transpose":
        out = g.transpose(w)
    elif op == "scale":
        out = g.scale(w, -1.7)
    elif op == "shift":
        out = g.shift(w, 0.3)
    elif op == "sigmoid":
        out = g.sigmoid(w)
    elif op == "silu":
        out = g.silu(w)
    elif op == "sum":
        out = g.add(g.sum(w, axis=0), g.const(np.full(4, 0.1)))
    elif op == "mean":
        out = g.mean(w, axis=0)
    elif op == "sqnorm":
        out = g.sqnorm(w)
    elif op == "concat":
        out = g.concat([w, g.const(rng.normal(size=(2, 4)))], axis=0)
    elif op == "slice":
        out = g.slice(w, 1, 1, 3)
    elif op == "broadcast_to":
        out = g.broadcast_to(g.sum(w, axis=0), (5, 4))
    else:
        raise AssertionError(f"unexercised op {op}")
    # Nonlinear readout so second-order terms exist in the check.
    return g, g.sqnorm(out)


class TestForward:
    def test_identity_graph(self):
        g = Graph()
        x = g.placeholder((2,))
        out = autodiff.forward(g, inputs=[np.array([1.0, 2.0])], output=x)
        assert np.array_equal(out, [1.0, 2.0])

    def test_square_elementwise(self):
        g = Graph()
        x = g.input([3.0])
        y = g.mul(x, x)
        assert np.array_equal(y.value, [9.0])

    def test_zero_input_mlp_returns_final_bias(self):
        rng = np.random.default_rng(7)
        g = Graph()
        x = g.input(np.zeros((1, 3)))
        w1 = g.const(rng.normal(size=(3, 5)))
        b1 = g.const(np.zeros(5))
        h = g.silu(g.add(g.matmul(x, w1), b1))
        w2 = g.const(rng.normal(size=(5, 2)))
        b2 = g.const(rng.normal(size=(2,)))
        out = g.add(g.matmul(h, w2), b2)
        # silu(0) == 0, so the hidden layer is dead and only the bias remains
        assert np.allclose(out.value, b2.value)

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(0)
        g = Graph()
        x = g.placeholder((4, 3))
        w = g.param("w", rng.normal(size=(3, 3)))
        out = g.silu(g.matmul(x, w))
        data = rng.normal(size=(4, 3))
        a = autodiff.forward(g, [data], output=out).copy()
        b = autodiff.forward(g, [data], output=out)
        assert np.array_equal(a, b)

    def test_shape_mismatch_names_offender(self):
        g = Graph()
        g.placeholder((2, 2), name="xin")
        with pytest.raises(ShapeError, match="xin"):
            autodiff.forward(g, [np.zeros((3, 3))])

    def test_matmul_shape_error(self):
        g = Graph()
        a = g.input(np.zeros((2, 3)))
        b = g.input(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            g.matmul(a, b)

    def test_nonfinite_detected(self):
        g = Graph()
        x = g.input([1e308])
        with pytest.raises(NonFiniteError):
            g.mul(x, x)


class TestBackward:
    def test_square_gradient(self):
        g = Graph()
        x = g.input([3.0], differentiable=True)
        g.mul(x, x)
        grads = autodiff.backward(g, np.ones(1))
        assert np.allclose(grads["inputs"][0], [6.0])

    def test_stop_grad_kills_one_factor(self):
        g = Graph()
        x = g.input([3.0], differentiable=True)
        g.mul(g.stop_grad(x), x)
        grads = autodiff.backward(g, np.ones(1))
        assert np.array_equal(grads["inputs"][0], [3.0])

    def test_stop_grad_upstream_params_exactly_zero(self):
        # g(x) = h(sg(u(x))): parameters of u get exact zeros
        rng = np.random.default_rng(3)
        g = Graph()
        x = g.input(rng.normal(size=(2, 3)))
        wu = g.param("wu", rng.normal(size=(3, 3)))
        u = g.silu(g.matmul(x, wu))
        wh = g.param("wh", rng.normal(size=(3, 1)))
        g.sqnorm(g.matmul(g.stop_grad(u), wh))
        grads = autodiff.backward(g, np.ones(()))
        assert np.all(grads["params"]["wu"] == 0.0)
        assert np.any(grads["params"]["wh"] != 0.0)

    def test_backward_before_forward_fails(self):
        g = Graph()
        x = g.placeholder((2,))
        g.mul(x, x)
        with pytest.raises(BackwardBeforeForward):
            autodiff.backward(g, np.ones(2))

    def test_output_grad_shape_checked(self):
        g = Graph()
        x = g.input(np.zeros((2, 2)))
        g.sum(x)
        with pytest.raises(ShapeError):
            autodiff.backward(g, np.ones((2, 2)))

    def test_three_layer_network_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        g = Graph()
        x = g.input(rng.normal(size=(5, 4)))
        h = x
        for i, dout in enumerate((8, 8, 3)):
            din = h.shape[1]
            w = g.param(f"w{i}", rng.normal(size=(din, dout)) * np.sqrt(2.0 / din))
            b = g.param(f"b{i}", rng.normal(size=(dout,)) * 0.1)
            z = g.add(g.matmul(h, w), b)
            h = g.silu(z) if i < 2 else z
        g.mean(g.sqnorm(h))
        report = grad_check(g, tolerance=1e-6, h=1e-6)
        assert report.passed, report.per_param


class TestGradCheck:
    def test_linear_layer_near_exact(self):
        rng = np.random.default_rng(5)
        g = Graph()
        x = g.input(rng.normal(size=(4, 3)))
        w = g.param("w", rng.normal(size=(3, 2)))
        g.sum(g.matmul(x, w))
        report = grad_check(g, tolerance=1e-9)
        assert report.passed
        assert report.worst < 1e-9

    def test_two_layer_smooth_network(self):
        rng = np.random.default_rng(7)
        g = Graph()
        x = g.input(rng.normal(size=(6, 3)))
        w1 = g.param("w1", rng.normal(size=(3, 10)) * 0.8)
        b1 = g.param("b1", rng.normal(size=(10,)) * 0.1)
        w2 = g.param("w2", rng.normal(size=(10, 2)) * 0.8)
        h = g.silu(g.add(g.matmul(x, w1), b1))
        g.sqnorm(g.matmul(h, w2))
        report = grad_check(g, tolerance=1e-6)
        assert report.passed
        assert report.worst < 1e-6

    def test_injected_bad_rule_is_caught(self, monkeypatch):
        def bad_silu_vjp(g, node, ref, og):
            x = autodiff.Ref(g, node.args[0])
            return [(node.args[0], g.mul(og, g.sigmoid(x)))]  # missing x*s*(1-s) term

        monkeypatch.setitem(autodiff._VJP, "silu", bad_silu_vjp)
        rng = np.random.default_rng(9)
        g = Graph()
        x = g.input(rng.normal(size=(4, 3)))
        w = g.param("w", rng.normal(size=(3, 3)))
        g.sqnorm(g.silu(g.matmul(x, w)))
        report = grad_check(g, tolerance=1e-6)
        assert not report.passed
        assert report.worst > 1e-2

    def test_requires_a_parameter(self):
        g = Graph()
        x = g.input([1.0])
        g.mul(x, x)
        with pytest.raises(GraphError):
            grad_check(g)

    def test_report_repr(self):
        report = GradCheckReport({"w": 1e-9}, 1e-6)
        assert "pass" in repr(report)


@pytest.mark.parametrize("op", OPS)
def test_every_registered_op_grad(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    g, out = build_op_graph(op, rng)
    report = grad_check(g, tolerance=1e-6, output=out)
    assert report.passed, f"{op}: {report.per_param}"


def test_relu_and_posmask_gradient():
    # relu = x * posmask(x); gradient is the indicator, checked off the kink
    g = Graph()
    x = g.input(np.array([[-2.0, -0.5, 0.5, 2.0]]), differentiable=True)
    g.sum(g.relu(x))
    grads = autodiff.backward(g, np.ones(()))
    assert np.array_equal(grads["inputs"][0], [[0.0, 0.0, 1.0, 1.0]])


def test_grad_wrt_intermediate_node():
    # d(sum(x @ w)) / dx recovers rows of w^T even though x is not a parameter
    rng = np.random.default_rng(2)
    g = Graph()
    x = g.input(rng.normal(size=(5, 3)))
    w = g.param("w", rng.normal(size=(3, 1)))
    (dx,) = g.grad(g.sum(g.matmul(x, w)), [x])
    assert np.allclose(dx.value, np.broadcast_to(w.value.T, (5, 3)))


def test_second_order_gradient_matches_finite_differences():
    # d/dparams of a squared-gradient-norm expression (the R1 pattern)
    rng = np.random.default_rng(21)
    g = Graph()
    f = g.input(rng.normal(size=(4, 3)))
    w1 = g.param("w1", rng.normal(size=(3, 6)) * 0.7)
    b1 = g.param("b1", rng.normal(size=(6,)) * 0.1)
    w2 = g.param("w2", rng.normal(size=(6, 1)) * 0.7)
    h = g.silu(g.add(g.matmul(f, w1), b1))
    score = g.matmul(h, w2)
    (df,) = g.grad(g.sum(score), [f])
    out = g.scale(g.sqnorm(df), 0.25)
    report = grad_check(g, tolerance=1e-6, output=out)
    assert report.passed, report.per_param


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(1, 4),
    inner=st.integers(1, 4),
    cols=st.integers(1, 4),
    seed=st.integers(0, 2**20),
)
def test_matmul_grad_property(rows, inner, cols, seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    a = g.param("a", rng.normal(size=(rows, inner)))
    b = g.const(rng.normal(size=(inner, cols)))
    g.sqnorm(g.matmul(a, b))
    assert grad_check(g, tolerance=1e-6).passed


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_silu_chain_grad_property(seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    w = g.param("w", rng.normal(size=(2, 3)))
    g.sqnorm(g.silu(g.silu(w)))
    assert grad_check(g, tolerance=1e-6).passed


def test_duplicate_param_name_rejected():
    g = Graph()
    g.param("w", np.zeros(2))
    with pytest.raises(GraphError):
        g.param("w", np.zeros(2))


def test_node_creation_order_is_topological():
    g = Graph()
    x = g.input(np.ones(2))
    y = g.mul(x, x)
    z = g.add(y, x)
    for idx, node in enumerate(g.nodes):
        assert all(a < idx for a in node.args)
    assert z.idx == len(g.nodes) - 1
