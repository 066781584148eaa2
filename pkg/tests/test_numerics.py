import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from speechchain import kernels
from speechchain.kernels import _py
from speechchain.numerics import (
    Adam,
    GraphStateError,
    NonFiniteGradientError,
    ShapeError,
    Tensor,
    backward,
    bce_with_logits,
    check_gradients,
    concat,
    cross_entropy,
    embedding,
    init_uniform,
    load_checkpoint,
    log_softmax,
    lrelu,
    lstm_cell,
    lstm_sequence,
    matmul,
    mul,
    reshape,
    save_checkpoint,
    sigmoid,
    slice_,
    softmax,
    squared_error,
    sum_,
    tanh,
)

SEEDS = range(20)
TOL = 1e-4


def test_matmul_shape():
    out = matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    assert out.shape == (2, 1)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 1\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_normalised(x):
    y = softmax(Tensor(x[None, :])).data
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) < 1e-12


def test_sigmoid_zero():
    assert sigmoid(Tensor(np.zeros(1))).data[0] == 0.5


def test_square_derivative():
    x = Tensor(np.array(3.0), requires_grad=True)
    backward(mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(5.0), requires_grad=True)
    backward(sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_twice_is_state_error():
    x = Tensor(np.arange(3.0), requires_grad=True)
    y = sum_(mul(x, x))
    backward(y)
    with pytest.raises(GraphStateError):
        backward(y)


def test_backward_without_graph_is_state_error():
    with pytest.raises(GraphStateError):
        backward(Tensor(np.ones(1)))


def test_backward_seed_shape_checked():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(tanh(x), seed=np.ones(3))


# --------------------------------------------------------------- gradient checks

def _rand(rng, *shape):
    return rng.normal(size=shape)


OP_CASES = {
    "matmul": (lambda r: {"a": _rand(r, 3, 4), "b": _rand(r, 4, 2)},
               lambda t: sum_(mul(matmul(t["a"], t["b"]), matmul(t["a"], t["b"])))),
    "add_broadcast": (lambda r: {"a": _rand(r, 3, 4), "b": _rand(r, 4)},
                      lambda t: sum_(tanh(t["a"] + t["b"]))),
    "mul": (lambda r: {"a": _rand(r, 3, 4), "b": _rand(r, 1, 4)},
            lambda t: sum_(tanh(mul(t["a"], t["b"])))),
    "concat": (lambda r: {"a": _rand(r, 2, 3), "b": _rand(r, 2, 2)},
               lambda t: sum_(tanh(concat([t["a"], t["b"]], axis=1)) * np.arange(5.0))),
    "slice": (lambda r: {"a": _rand(r, 4, 5)},
              lambda t: sum_(tanh(slice_(t["a"], (slice(1, 3), slice(None, None, 2)))))),
    "reshape": (lambda r: {"a": _rand(r, 4, 3)},
                lambda t: sum_(tanh(reshape(t["a"], (2, 6))) * np.arange(12.0).reshape(2, 6))),
    "embedding": (lambda r: {"e": _rand(r, 5, 3)},
                  lambda t: sum_(tanh(embedding(t["e"], [0, 3, 3, 1])))),
    "sigmoid": (lambda r: {"a": _rand(r, 3, 3)}, lambda t: sum_(mul(sigmoid(t["a"]), t["a"]))),
    "tanh": (lambda r: {"a": _rand(r, 3, 3)}, lambda t: sum_(mul(tanh(t["a"]), t["a"]))),
    "lrelu": (lambda r: {"a": _rand(r, 3, 3)}, lambda t: sum_(mul(lrelu(t["a"]), t["a"]))),
    "softmax": (lambda r: {"a": _rand(r, 2, 5)},
                lambda t: sum_(softmax(t["a"]) * np.arange(10.0).reshape(2, 5))),
    "log_softmax": (lambda r: {"a": _rand(r, 2, 5)},
                    lambda t: sum_(log_softmax(t["a"]) * np.arange(10.0).reshape(2, 5))),
    "cross_entropy": (lambda r: {"a": _rand(r, 4, 6)}, lambda t: cross_entropy(t["a"], [0, 5, 2, 2])),
    "bce": (lambda r: {"a": _rand(r, 3, 1)}, lambda t: bce_with_logits(t["a"], [[0.0], [1.0], [1.0]])),
    "squared_error": (lambda r: {"a": _rand(r, 3, 2)},
                      lambda t: squared_error(tanh(t["a"]), np.ones((3, 2)))),
    "lstm_cell": (
        lambda r: {"x": _rand(r, 1, 3), "h": _rand(r, 1, 2), "c": _rand(r, 1, 2),
                   "wi": _rand(r, 3, 8), "wh": _rand(r, 2, 8), "b": _rand(r, 8)},
        lambda t: sum_(lstm_cell(t["x"], t["h"], t["c"], t["wi"], t["wh"], t["b"]) * np.arange(4.0)),
    ),
    "lstm_sequence": (
        lambda r: {"x": _rand(r, 5, 3), "wi": _rand(r, 3, 8), "wh": _rand(r, 2, 8), "b": _rand(r, 8)},
        lambda t: sum_(lstm_sequence(t["x"], t["wi"], t["wh"], t["b"]) * np.arange(10.0).reshape(5, 2)),
    ),
    "lstm_sequence_reverse": (
        lambda r: {"x": _rand(r, 5, 3), "wi": _rand(r, 3, 8), "wh": _rand(r, 2, 8), "b": _rand(r, 8)},
        lambda t: sum_(lstm_sequence(t["x"], t["wi"], t["wh"], t["b"], reverse=True)
                       * np.arange(10.0).reshape(5, 2)),
    ),
}


@pytest.mark.parametrize("op", sorted(OP_CASES))
@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients_match_finite_differences(op, seed):
    make, build = OP_CASES[op]
    errors = check_gradients(build, make(np.random.default_rng(seed)))
    assert max(errors.values()) < TOL, errors


@pytest.mark.parametrize("seed", SEEDS)
def test_three_layer_network_gradient(seed):
    rng = np.random.default_rng(seed)
    arrays_ = {"w1": _rand(rng, 4, 6), "w2": _rand(rng, 6, 5), "w3": _rand(rng, 5, 3), "x": _rand(rng, 2, 4)}

    def build(t):
        h = tanh(matmul(t["x"], t["w1"]))
        h = sigmoid(matmul(h, t["w2"]))
        return cross_entropy(matmul(h, t["w3"]), [0, 2])

    assert max(check_gradients(build, arrays_).values()) < TOL


def _composed_cell(x, h, c, wi, wh, b):
    z = matmul(x, wi) + matmul(h, wh) + b
    H = c.shape[-1]
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c2 = mul(f, c) + mul(i, g)
    return concat([mul(o, tanh(c2)), c2], axis=-1)


@pytest.mark.parametrize("seed", range(5))
def test_fused_cell_matches_primitive_composition(seed):
    rng = np.random.default_rng(seed)
    vals = [_rand(rng, 2, 3), _rand(rng, 2, 4), _rand(rng, 2, 4), _rand(rng, 3, 16), _rand(rng, 4, 16), _rand(rng, 16)]
    weight = _rand(rng, 2, 8)
    grads = []
    for fn in (lstm_cell, _composed_cell):
        ts = [Tensor(v, requires_grad=True) for v in vals]
        out = fn(*ts)
        backward(sum_(mul(out, weight)))
        grads.append((out.data, [t.grad for t in ts]))
    np.testing.assert_allclose(grads[0][0], grads[1][0], rtol=0, atol=1e-12)
    for a, b in zip(grads[0][1], grads[1][1]):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_fused_sequence_matches_unrolled_cells(reverse):
    rng = np.random.default_rng(3)
    x, wi, wh, b = _rand(rng, 6, 3), _rand(rng, 3, 8), _rand(rng, 2, 8), _rand(rng, 8)
    seq = lstm_sequence(Tensor(x), Tensor(wi), Tensor(wh), Tensor(b), reverse=reverse).data
    h = np.zeros((1, 2))
    c = np.zeros((1, 2))
    order = range(5, -1, -1) if reverse else range(6)
    for t in order:
        hc = _composed_cell(Tensor(x[t:t + 1]), Tensor(h), Tensor(c), Tensor(wi), Tensor(wh), Tensor(b)).data
        h, c = hc[:, :2], hc[:, 2:]
        np.testing.assert_allclose(seq[t], h[0], atol=1e-12)


@pytest.mark.parametrize("reverse", [False, True])
def test_compiled_and_python_kernels_agree(reverse):
    rng = np.random.default_rng(7)
    pre, w = _rand(rng, 9, 12), _rand(rng, 3, 12)
    fwd_a = kernels.lstm_seq_forward(pre, w, reverse)
    fwd_b = _py.lstm_seq_forward(pre, w, reverse)
    for a, b in zip(fwd_a, fwd_b):
        np.testing.assert_allclose(a, b, atol=1e-12)
    dhs = _rand(rng, 9, 3)
    for a, b in zip(kernels.lstm_seq_backward(dhs, w, *fwd_a, reverse),
                    _py.lstm_seq_backward(dhs, w, *fwd_b, reverse)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_shared_subexpression_accumulates():
    rng = np.random.default_rng(0)
    xv = rng.normal(size=(3, 3))
    wv = rng.normal(size=(3, 3))

    x = Tensor(xv, requires_grad=True)
    w = Tensor(wv, requires_grad=True)
    shared = tanh(matmul(x, w))
    backward(sum_(mul(shared, shared) + shared))

    x2 = Tensor(xv, requires_grad=True)
    w2 = Tensor(wv, requires_grad=True)
    a, b, c = (tanh(matmul(x2, w2)) for _ in range(3))
    backward(sum_(mul(a, b) + c))

    np.testing.assert_allclose(x.grad, x2.grad, rtol=0, atol=1e-12)
    np.testing.assert_allclose(w.grad, w2.grad, rtol=0, atol=1e-12)


# --------------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    opt = Adam(lr=0.1)
    p = {"w": np.array([1.0, -2.0])}
    new = opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(new["w"], p["w"])
    assert opt.step_count == 1


def test_adam_first_step_moves_by_lr():
    opt = Adam(lr=0.1)
    new = opt.step({"p": np.array(0.0)}, {"p": np.array(1.0)})
    assert new["p"] == pytest.approx(-0.1, abs=1e-8)


def test_adam_minimises_quadratic():
    opt = Adam(lr=0.1)
    params = {"p": np.array(0.0)}
    for _ in range(100):
        p = Tensor(params["p"], requires_grad=True)
        backward(squared_error(p, np.array(2.0)))
        params = opt.step(params, {"p": p.grad})
    assert abs(params["p"] - 2.0) < 0.05


def test_adam_rejects_non_finite_gradient():
    opt = Adam()
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        opt.step(params, {"a": np.ones(2), "b": np.array([1.0, np.nan])})
    assert opt.step_count == 0


def test_init_uniform_range_and_determinism():
    shapes = {"a": (10, 10), "b": (5,)}
    p1 = init_uniform(shapes, np.random.default_rng(1))
    p2 = init_uniform(shapes, np.random.default_rng(1))
    for k in shapes:
        assert np.abs(p1[k]).max() <= 0.08
        np.testing.assert_array_equal(p1[k], p2[k])


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"enc/w": rng.normal(size=(3, 4)), "b": rng.normal(size=(7,)), "s": np.array(np.pi)}
    tensors["b"][2] = -0.0
    save_checkpoint(tmp_path / "x.ckpt", tensors, seed=11, step=42, meta={"k": "v"})
    back, seed, step, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert (seed, step, meta) == (11, 42, {"k": "v"})
    for k, v in tensors.items():
        assert back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()
