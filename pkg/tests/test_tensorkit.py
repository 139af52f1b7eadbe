import numpy as np
import pytest

import locustbreed.tensorkit as tk
from locustbreed.tensorkit import (
    EmptyMask,
    Linear,
    Module,
    ShapeError,
    Tensor,
    check_gradients,
    decode_tensor,
    encode_tensor,
)
from locustbreed.tensorkit.gradcheck import numerical_gradient
from op_cases import CASES, op_case


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_matches_finite_differences(name):
    worst = max(check_gradients(*op_case(name, seed)) for seed in range(10))
    assert worst < 1e-6


def _conv_loop(x, w, b, stride, pad):
    """Direct cross-correlation over N-D inputs [N,C,*S] with zero padding."""
    nd = w.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    out_sp = [(xp.shape[2 + i] - w.shape[2 + i]) // stride[i] + 1 for i in range(nd)]
    out = np.zeros((x.shape[0], w.shape[0], *out_sp))
    for n in range(x.shape[0]):
        for f in range(w.shape[0]):
            for o in np.ndindex(*out_sp):
                acc = b[f] if b is not None else 0.0
                for c in range(x.shape[1]):
                    for k in np.ndindex(*w.shape[2:]):
                        idx = tuple(o[i] * stride[i] + k[i] for i in range(nd))
                        acc += w[(f, c) + k] * xp[(n, c) + idx]
                out[(n, f) + o] = acc
    return out


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_matches_loop(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 5)), rng.normal(size=4)
    got = tk.conv2d(x, w, b).data
    assert np.abs(got - _conv_loop(x, w, b, (1, 1), (1, 2))).max() < 1e-10
    got = tk.conv2d(x, w, None, stride=2, padding=0).data
    assert np.abs(got - _conv_loop(x, w, None, (2, 2), (0, 0))).max() < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_conv3d_matches_loop(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(1, 2, 4, 7, 7)), rng.normal(size=(3, 2, 3, 7, 7)), rng.normal(size=3)
    got = tk.conv3d(x, w, b).data
    assert got.shape == (1, 3, 4, 7, 7)
    assert np.abs(got - _conv_loop(x, w, b, (1, 1, 1), (1, 3, 3))).max() < 1e-10


def test_unbatched_conv_matches_batched():
    rng = np.random.default_rng(0)
    x, w = rng.normal(size=(3, 5, 5)), rng.normal(size=(2, 3, 3, 3))
    np.testing.assert_array_equal(tk.conv2d(x, w).data, tk.conv2d(x[None], w).data[0])


def test_conv_transpose_is_adjoint_of_strided_conv():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 3, 2, 2))  # conv: C=3 -> F=4; transpose: 4 -> 3
    x = rng.normal(size=(2, 3, 8, 8))
    y = rng.normal(size=(2, 4, 4, 4))
    lhs = float(np.sum(tk.conv2d(x, w, stride=2, padding=0).data * y))
    rhs = float(np.sum(x * tk.conv_transpose2d(y, w, stride=2).data))
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        tk.conv2d(np.zeros((1, 3, 5, 5)), np.zeros((2, 4, 3, 3)))


def test_broadcast_gradient_reduces():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    tk.sum_(tk.mul(a, b)).backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_shared_subgraph_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with tk.no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad
    assert tk.is_grad_enabled()


def test_masked_ce_ignores_pixels_and_rejects_empty():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(1, 2, 3, 3))
    mask = np.full((1, 3, 3), tk.IGNORE, np.uint8)
    with pytest.raises(EmptyMask):
        tk.masked_pixel_cross_entropy(z, mask)
    mask[0, 1, 1] = 1
    got = tk.masked_pixel_cross_entropy(z, mask).item()
    logp = z[0, :, 1, 1] - np.log(np.exp(z[0, :, 1, 1]).sum())
    assert got == pytest.approx(-logp[1], abs=1e-14)


def test_hinge_far_point_is_zero():
    assert tk.hinge(np.array([[5.0], [-4.0]]), np.array([1, 0])).item() == 0.0


def test_snapshot_round_trip():
    rng = np.random.default_rng(0)
    for shape in [(), (3,), (2, 0, 4), (2, 3, 4)]:
        a = rng.normal(size=shape)
        raw = encode_tensor(a)
        back, end = decode_tensor(raw + b"tail")
        assert end == len(raw)
        assert back.shape == a.shape and np.array_equal(back, a)


class _Pair(Module):
    def __init__(self):
        rng = np.random.default_rng(0)
        self.first = Linear(rng, 3, 4)
        self.layers = [Linear(rng, 4, 2)]
        self.buffer = Tensor(np.ones(2))


def test_module_naming_and_state():
    m = _Pair()
    names = [n for n, _ in m.named_parameters()]
    assert names == ["first.weight", "first.bias", "layers.0.weight", "layers.0.bias"]
    assert "buffer" in dict(m.named_tensors())
    state = m.state_dict()
    state["layers.0.weight"] = np.zeros((4, 3))
    with pytest.raises(ShapeError, match="layers.0.weight"):
        m.load_state_dict(state)
    with pytest.raises(KeyError):
        m.load_state_dict({"first.weight": np.zeros((3, 4))})


def test_numerical_gradient_of_quadratic():
    g = numerical_gradient(lambda t: tk.sum_(tk.mul(t, t)), [np.array([1.0, -2.0])])[0]
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)


def test_attention_weights_are_normalised():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 8))
    out, weights = tk.multi_head_attention(x, rng.normal(size=(8, 24)), np.zeros(24), rng.normal(size=(8, 8)),
                                           np.zeros(8), heads=4, return_weights=True)
    assert out.shape == (2, 5, 8) and weights.shape == (2, 4, 5, 5)
    np.testing.assert_allclose(np.asarray(getattr(weights, "data", weights)).sum(-1), 1.0, atol=1e-12)
