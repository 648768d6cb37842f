import importlib
import os
import struct
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crispnet.autodiff import (
    AdamHyper,
    AdamState,
    Graph,
    GraphError,
    MissingGradError,
    NumericalInstabilityError,
    ShapeError,
    Tensor,
    backward,
    grad_check,
    ops,
    optimizer_step,
    parameter,
)
from crispnet.autodiff import checkpoint, kernels
from crispnet.autodiff.kernels import _fallback


def test_no_graph_means_no_grad_state():
    w = parameter(np.ones(3))
    y = ops.scale(w, 2.0)
    assert y.node is None and not y.requires_grad


def test_backward_scalar_and_zero_fill():
    a = parameter(np.array([1.0, 2.0, 3.0]), name="a")
    unused = parameter(np.ones(2), name="unused")
    with Graph() as g:
        loss = ops.sum(ops.mul(a, a))
    backward(g, loss, [a, unused])
    np.testing.assert_allclose(a.grad, [2.0, 4.0, 6.0])
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


def test_grads_accumulate_over_shared_use():
    a = parameter(np.array([2.0]))
    with Graph() as g:
        y = ops.add(ops.mul(a, a), ops.scale(a, 3.0))
        loss = ops.sum(y)
    backward(g, loss)
    np.testing.assert_allclose(a.grad, [7.0])


def test_detached_loss_rejected():
    a = parameter(np.ones(2))
    with Graph() as g1:
        l1 = ops.sum(a)
    with Graph() as g2:
        ops.sum(ops.scale(a, 2.0))
    with pytest.raises(GraphError, match="detached"):
        backward(g2, l1)
    with pytest.raises(GraphError, match="scalar"):
        backward(g1, a)


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError, match="channel_mul"):
        ops.channel_mul(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.ones(4)))


def test_non_finite_output_raises():
    with pytest.raises(NumericalInstabilityError, match="scale"):
        ops.scale(Tensor(np.array([3e38])), 10.0)


def test_outputs_are_float32():
    y = ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert y.data.dtype == np.float32


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 5, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, pad=1).data
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 6))
    for i in range(5):
        for j in range(6):
            ref[:, :, i, j] = np.einsum("nckl,ockl->no", xp[:, :, i:i + 3, j:j + 3], w) + b
    np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)


def test_softmax_rows_and_layernorm_moments():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 7)))
    s = ops.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    ln = ops.layernorm(x, Tensor(np.ones(7)), Tensor(np.zeros(7))).data
    np.testing.assert_allclose(ln.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(ln.std(axis=-1), 1.0, atol=1e-3)


def test_batchnorm_eval_mode_uses_running_stats():
    running = {"mean": np.array([1.0, -1.0]), "var": np.array([4.0, 1.0])}
    x = np.random.default_rng(0).standard_normal((3, 2, 2, 2)).astype(np.float32)
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    y1 = ops.batchnorm2d(Tensor(x), g, b, running, training=False).data
    y2 = ops.batchnorm2d(Tensor(x[:1]), g, b, running, training=False).data
    np.testing.assert_array_equal(y1[:1], y2)
    np.testing.assert_allclose(y1[:, 0], (x[:, 0] - 1.0) / np.sqrt(4.0 + 1e-5), rtol=1e-5)


def test_l2_normalize_unit_norm():
    x = Tensor(np.random.default_rng(2).standard_normal((3, 9)))
    y = ops.l2_normalize(x, axis=-1).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("op", ["gelu", "softmax", "layernorm", "conv2d", "l2_normalize", "batchnorm2d"])
def test_grad_check_single_ops(op):
    from crispnet.autodiff.gradcheck import primitive_cases

    for name, inputs, params, which in primitive_cases(3):
        if name == op:
            assert grad_check(name, inputs, 1e-3, params, which, seed=3).passed


def test_grad_check_detects_wrong_backward():
    from crispnet.autodiff.ops import Primitive

    class BadSquare(Primitive):
        name = "bad_square"
        n_inputs = 1

        @staticmethod
        def forward(ctx, x):
            ctx.saved = (x,)
            return x * x

        @staticmethod
        def backward(ctx, g):
            return (g * ctx.saved[0],)  # missing factor 2

    rep = grad_check(BadSquare, [np.linspace(-1, 1, 6)])
    assert not rep.passed and rep.max_rel_err > 0.4


def test_grad_check_rejects_bad_epsilon_and_large_inputs():
    with pytest.raises(ValueError):
        grad_check("relu", [np.ones(3)], epsilon=1.0)
    with pytest.raises(ValueError):
        grad_check("relu", [np.ones(2000)])


# ------------------------------------------------------------------ Adam


def test_adam_first_step_moves_by_lr():
    p = parameter(np.array([1.0, -2.0]), name="p")
    p.grad = np.array([0.5, -3.0], dtype=np.float32)
    st_ = optimizer_step([p], AdamState(), AdamHyper(lr=0.1))
    # bias-corrected first step is lr * sign(g)
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)
    assert st_.step == 1 and p.grad is None


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(0)
    p = parameter(rng.standard_normal(4), name="w")
    ref = p.data.astype(np.float64)
    m = v = np.zeros(4)
    state, hyper = AdamState(), AdamHyper(lr=1e-2)
    for t in range(1, 6):
        g = rng.standard_normal(4).astype(np.float32)
        p.grad = g
        optimizer_step([p], state, hyper)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g.astype(np.float64) ** 2
        ref = ref - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        ref = ref.astype(np.float32).astype(np.float64)
    np.testing.assert_allclose(p.data, ref, rtol=1e-6)


def test_adam_missing_grad_names_parameter():
    p = parameter(np.ones(2), name="enc1.c1.w")
    with pytest.raises(MissingGradError, match="enc1.c1.w"):
        optimizer_step([p], AdamState())


# ------------------------------------------------------------------ checkpoint


def test_checkpoint_layout_and_roundtrip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    blob = checkpoint.dumps(tensors, "levels=3\n")
    assert blob[:4] == b"CRSP"
    assert struct.unpack_from("<I", blob, 4)[0] == checkpoint.VERSION
    (n,) = struct.unpack_from("<I", blob, 8)
    assert blob[12:12 + n] == b"levels=3\n"
    path = tmp_path / "x.crsp"
    checkpoint.save(path, tensors, "levels=3\n")
    back, text = checkpoint.load(path)
    assert text == "levels=3\n"
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE" + b"\0" * 20)
    good = checkpoint.dumps({"a": np.ones(3, dtype=np.float32)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(good[:-2])


# ------------------------------------------------------------------ kernels


def test_compiled_backend_loaded():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(3, 9), w=st.integers(3, 9),
       k=st.sampled_from([1, 2, 3]), stride=st.sampled_from([1, 2]), seed=st.integers(0, 999))
def test_backends_bit_identical(n, c, h, w, k, stride, seed):
    try:
        from crispnet.autodiff.kernels import _ckernels
    except ImportError:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((n, c, h, w))
    a, b = _fallback.im2col(xp, k, k, stride), _ckernels.im2col(xp, k, k, stride)
    assert np.array_equal(a, b)
    cols = rng.standard_normal(a.shape)
    assert np.array_equal(_fallback.col2im(cols, n, c, h, w, k, k, stride), _ckernels.col2im(cols, n, c, h, w, k, k, stride))
    x = rng.standard_normal((n, c, 2 * (h // 2) or 2, 2 * (w // 2) or 2)).astype(np.float32)
    x[..., ::2, ::2] = x[..., 1::2, 1::2]  # force ties
    (pa, ia), (pb, ib) = _fallback.maxpool2x2(x), _ckernels.maxpool2x2(x)
    assert np.array_equal(pa, pb) and np.array_equal(ia, ib)
    assert np.array_equal(_fallback.maxpool2x2_backward(pa, ia), _ckernels.maxpool2x2_backward(pa, ia))


def test_kernels_accept_non_contiguous_views():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 6, 8, 3)).astype(np.float32)
    view = x.transpose(0, 3, 1, 2)
    w = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
    a = ops.conv2d(Tensor(view), Tensor(w), stride=2, pad=1).data
    b = ops.conv2d(Tensor(np.ascontiguousarray(view)), Tensor(w), stride=2, pad=1).data
    assert np.array_equal(a, b)
    f = np.asfortranarray(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    assert np.array_equal(kernels.maxpool2x2(f)[0], kernels.maxpool2x2(np.ascontiguousarray(f))[0])


def test_im2col_col2im_adjoint():
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((2, 3, 7, 6))
    cols = rng.standard_normal(_fallback.im2col(xp, 3, 3, 2).shape)
    lhs = np.sum(_fallback.im2col(xp, 3, 3, 2) * cols)
    rhs = np.sum(xp * _fallback.col2im(cols, 2, 3, 7, 6, 3, 3, 2))
    assert abs(lhs - rhs) < 1e-9


def test_fallback_selected_by_env():
    code = "from crispnet.autodiff import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, CRISP_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_apply_deterministic():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    assert np.array_equal(ops.conv2d(x, w, pad=1).data, ops.conv2d(x, w, pad=1).data)


def test_package_reimport_stable():
    mod = importlib.reload(kernels)
    assert mod.BACKEND in ("cython", "python")
