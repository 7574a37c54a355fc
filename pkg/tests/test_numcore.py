import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from hrtmaddpg import numcore as nc
from hrtmaddpg.gradcheck import check, numeric_grads, tape_grads
from hrtmaddpg.numcore import Tape, Tensor


def unif(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def weighted_sum(y, w):
    return nc.reduce_sum(nc.mul(y, Tensor(w)))


# -- tensor_new

def test_tensor_new_identity():
    t = nc.tensor_new([2, 2], [1, 0, 0, 1])
    assert np.array_equal(t.data, np.eye(2))
    assert not t.tracked


def test_tensor_new_zero_vector():
    t = nc.tensor_new([3], [0, 0, 0])
    assert t.shape == (3,) and t.values == [0.0, 0.0, 0.0]


def test_tensor_new_length_mismatch():
    with pytest.raises(nc.ShapeError):
        nc.tensor_new([2], [1, 2, 3])


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3))
def test_tensor_new_shape_product(shape):
    n = int(np.prod(shape))
    t = nc.tensor_new(shape, range(n))
    assert t.shape == tuple(shape) and len(t.values) == n


# -- matmul

@given(hnp.arrays(np.float64, (2, 2), elements=st.floats(-10, 10)))
def test_matmul_identity(a):
    assert np.array_equal(nc.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_hand():
    out = nc.matmul(nc.tensor_new([2, 2], [1, 2, 3, 4]), nc.tensor_new([2, 1], [1, 1]))
    assert out.values == [3.0, 7.0]


def test_matmul_mismatch():
    with pytest.raises(nc.ShapeError):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(nc.ShapeError):
        nc.matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 2, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_grad(seed):
    rng = np.random.default_rng(seed)
    A, B = unif(rng, 3, 5), unif(rng, 5, 4)
    assert check(lambda t: nc.reduce_sum(nc.matmul(t[0], t[1])), [A, B]) <= 1e-6


def test_matmul_batched_and_shared_grad(rng):
    A, B, C = unif(rng, 2, 3, 4), unif(rng, 4, 5), unif(rng, 2, 5, 3)
    W = unif(rng, 2, 3, 3)
    f = lambda t: weighted_sum(nc.matmul(nc.matmul(t[0], t[1]), t[2]), W)
    assert check(f, [A, B, C]) <= 1e-6


def test_vector_matmul_grad(rng):
    f = lambda t: weighted_sum(nc.matmul(t[0], t[1]), np.arange(3.0))
    assert check(f, [unif(rng, 4), unif(rng, 4, 3)]) <= 1e-6


# -- elementwise

def test_tanh_zero():
    assert nc.tanh(Tensor(np.zeros(3))).values == [0.0, 0.0, 0.0]


def test_relu_values():
    assert nc.ewise("relu", nc.tensor_new([2], [-1, 2])).values == [0.0, 2.0]


def test_tanh_grad_closed_form(rng):
    x = unif(rng, 6)
    tape = Tape()
    leaf = tape.watch(Tensor(x))
    g = nc.backward(nc.reduce_sum(nc.tanh(leaf)))[leaf].data
    assert np.allclose(g, 1 - np.tanh(x) ** 2, rtol=0, atol=1e-15)
    fd = numeric_grads(lambda t: nc.reduce_sum(nc.tanh(t[0])), [x])[0]
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) <= 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_grads(op, rng):
    w = unif(rng, 3, 4)
    assert check(lambda t: weighted_sum(nc.ewise(op, t[0], t[1]), w), [unif(rng, 3, 4), unif(rng, 3, 4)]) <= 1e-6


@pytest.mark.parametrize("op", ["tanh", "relu", "exp"])
def test_unary_grads(op, rng):
    w = unif(rng, 3, 4)
    x = unif(rng, 3, 4)
    x += 0.01 * np.sign(x)
    assert check(lambda t: weighted_sum(nc.ewise(op, t[0]), w), [x]) <= 1e-6


def test_scale_grad(rng):
    assert check(lambda t: nc.reduce_sum(nc.ewise("scale", t[0], -2.5)), [unif(rng, 5)]) <= 1e-6


def test_binary_shape_mismatch():
    with pytest.raises(nc.ShapeError):
        nc.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ValueError):
        nc.ewise("sigmoid", Tensor(np.ones(3)))


def test_structural_op_grads(rng):
    w = unif(rng, 2, 7)
    f = lambda t: weighted_sum(nc.concat([t[0], nc.slice_last(t[1], 1, 4)], axis=-1), w)
    assert check(f, [unif(rng, 2, 4), unif(rng, 2, 5)]) <= 1e-6
    w2 = unif(rng, 3, 2)
    f2 = lambda t: weighted_sum(nc.transpose(nc.reshape(nc.take(t[0], 1, axis=0), (2, 3))), w2)
    assert check(f2, [unif(rng, 3, 6)]) <= 1e-6
    w3 = unif(rng, 4, 2, 3)
    assert check(lambda t: weighted_sum(nc.permute(t[0], (2, 0, 1)), w3), [unif(rng, 2, 3, 4)]) <= 1e-6
    assert check(lambda t: nc.mean(nc.add_bias(t[0], t[1])), [unif(rng, 3, 4), unif(rng, 4)]) <= 1e-6


# -- softmax

def test_softmax_uniform():
    assert np.allclose(nc.softmax(Tensor(np.ones(3))).data, 1 / 3, rtol=0, atol=1e-16)


def test_softmax_single():
    assert nc.softmax(Tensor([4.2])).values == [1.0]


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-30, 30)),
       st.floats(-50, 50))
def test_softmax_rows_and_shift(x, c):
    y = nc.softmax(Tensor(x), axis=-1).data
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1)) <= 1e-12
    y2 = nc.softmax(Tensor(x + c), axis=-1).data
    assert np.max(np.abs(y - y2)) <= 1e-12


def test_softmax_axis_bounds():
    with pytest.raises(nc.ShapeError):
        nc.softmax(Tensor(np.ones((2, 2))), axis=2)


def test_softmax_grad(rng):
    w = unif(rng, 3, 5)
    for axis in (0, 1):
        assert check(lambda t: weighted_sum(nc.softmax(t[0], axis=axis), w), [unif(rng, 3, 5)]) <= 1e-6


# -- layer norm

def test_layer_norm_constant_row():
    out = nc.layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_two_values():
    out = nc.layer_norm(nc.tensor_new([1, 2], [1, 3]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    assert out.values == [-1.0, 1.0]


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 8)), elements=st.floats(-1, 1)))
def test_layer_norm_standardises(x):
    spread = x.max(axis=-1) - x.min(axis=-1)
    x = x[spread > 1e-2]
    if not len(x):
        return
    n = x.shape[-1]
    y = nc.layer_norm(Tensor(x), Tensor(np.ones(n)), Tensor(np.zeros(n)), eps=1e-5).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-9)
    # eps sits inside the root, so the variance is var/(var+eps)
    var = x.var(axis=-1)
    assert np.allclose(y.var(axis=-1), var / (var + 1e-5), rtol=0, atol=1e-12)


def test_layer_norm_unit_variance_with_tiny_eps(rng):
    x = unif(rng, 6, 8)
    y = nc.layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-9)
    assert np.all(np.abs(y.var(axis=-1) - 1) <= 1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_layer_norm_grad(seed):
    rng = np.random.default_rng(seed)
    w = unif(rng, 4, 8)
    f = lambda t: weighted_sum(nc.layer_norm(t[0], t[1], t[2]), w)
    assert check(f, [unif(rng, 4, 8), unif(rng, 8), unif(rng, 8)]) <= 1e-6


# -- backward

def test_backward_sum_gives_ones():
    tape = Tape()
    x = tape.watch(Tensor(np.arange(4.0)))
    assert np.array_equal(nc.backward(nc.reduce_sum(x))[x].data, np.ones(4))


def test_backward_square():
    tape = Tape()
    x = tape.watch(nc.tensor_new([2], [1, 2]))
    assert nc.backward(nc.reduce_sum(nc.mul(x, x)))[x].values == [2.0, 4.0]


def test_backward_errors():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    with pytest.raises(nc.ShapeError):
        nc.backward(nc.tanh(x))
    with pytest.raises(nc.TapeError):
        nc.backward(nc.reduce_sum(Tensor(np.ones(3))))


def test_backward_consumes_tape():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    loss = nc.reduce_sum(nc.mul(x, x))
    nc.backward(loss)
    assert len(tape) == 0
    with pytest.raises(nc.TapeError):
        nc.backward(loss)


def test_untracked_never_gets_gradient():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    c = Tensor(np.full(3, 2.0))
    grads = nc.backward(nc.reduce_sum(nc.mul(x, c)))
    assert list(grads) == [x]
    assert not c.tracked


def test_one_gradient_per_reachable_leaf():
    tape = Tape()
    a = tape.watch(Tensor(np.ones(2)))
    b = tape.watch(Tensor(np.ones(2)))
    unused = tape.watch(Tensor(np.ones(2)))
    grads = nc.backward(nc.reduce_sum(nc.add(nc.mul(a, b), a)))
    assert set(grads) == {a, b}
    assert unused not in grads
    assert grads[a].values == [2.0, 2.0]


def test_mixed_tapes_rejected():
    x = Tape().watch(Tensor(np.ones(2)))
    y = Tape().watch(Tensor(np.ones(2)))
    with pytest.raises(nc.TapeError):
        nc.add(x, y)


# -- adam

def test_adam_zero_grad_keeps_params():
    p = [Tensor(np.array([1.0, -2.0]))]
    st0 = nc.OptimizerState(m=(np.array([0.5, 0.5]),), v=(np.array([0.2, 0.2]),), step=3)
    new, st1 = nc.adam_step(p, [Tensor(np.zeros(2))], st0)
    assert np.array_equal(st1.m[0], 0.9 * st0.m[0])
    assert np.array_equal(st1.v[0], 0.999 * st0.v[0])
    assert st1.step == 4
    # with fresh moments a zero gradient must leave the parameter untouched
    fresh = nc.adam_init(p)
    same, st2 = nc.adam_step(p, [Tensor(np.zeros(2))], fresh)
    assert np.array_equal(same[0].data, p[0].data)
    assert np.array_equal(st2.m[0], np.zeros(2))


@given(hnp.arrays(np.float64, 5, elements=st.floats(1e-3, 10) | st.floats(-10, -1e-3)))
def test_adam_first_step_is_sign(g):
    p = [Tensor(np.zeros(5))]
    new, _ = nc.adam_step(p, [Tensor(g)], nc.adam_init(p, lr=1e-2))
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    expected = -1e-2 * g / (np.abs(g) + 1e-8)
    assert np.allclose(new[0].data, expected, rtol=1e-12, atol=0)
    assert np.allclose(new[0].data, -1e-2 * np.sign(g), rtol=1e-5, atol=0)


def test_adam_per_parameter_rates(rng):
    p = [Tensor(np.zeros(3)), Tensor(np.zeros((2, 2)))]
    g = [Tensor(unif(rng, 3) + 2.0), Tensor(unif(rng, 2, 2) - 2.0)]
    new, st1 = nc.adam_step(p, g, nc.adam_init(p, lr=[1e-2, 1e-3]))
    assert np.allclose(new[0].data, -1e-2, rtol=1e-6, atol=0)
    assert np.allclose(new[1].data, 1e-3, rtol=1e-6, atol=0)
    # a single rate and a per-parameter tuple of that rate agree bitwise
    same, _ = nc.adam_step(p, g, nc.adam_init(p, lr=[1e-2, 1e-2]))
    ref, _ = nc.adam_step(p, g, nc.adam_init(p, lr=1e-2))
    assert all(np.array_equal(a.data, b.data) for a, b in zip(same, ref))
    with pytest.raises(nc.ShapeError):
        nc.adam_init(p, lr=[1e-2])


def test_adam_pure(rng):
    p = [Tensor(unif(rng, 3, 2))]
    g = [Tensor(unif(rng, 3, 2))]
    st0 = nc.adam_init(p)
    before = p[0].data.copy()
    a, sa = nc.adam_step(p, g, st0)
    b, sb = nc.adam_step(p, g, st0)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(sa.m[0], sb.m[0]) and np.array_equal(sa.v[0], sb.v[0])
    assert np.array_equal(p[0].data, before) and st0.step == 0


def test_adam_shape_mismatch():
    p = [Tensor(np.zeros(3))]
    with pytest.raises(nc.ShapeError):
        nc.adam_step(p, [Tensor(np.zeros(4))], nc.adam_init(p))


def test_clip_grad_norm():
    g = [Tensor(np.array([3.0, 4.0])), None]
    out = nc.clip_grad_norm(g, 1.0)
    assert np.allclose(out[0].data, [0.6, 0.8]) and out[1] is None
    assert nc.clip_grad_norm(g, 10.0)[0] is g[0]


# -- primitive gradient sweep: uniform [-1, 1] inputs, extents <= 8

PRIMITIVES = {
    "matmul": (lambda t: nc.matmul(t[0], t[1]), lambda r, m, k, n: [unif(r, m, k), unif(r, k, n)]),
    "add": (lambda t: nc.add(t[0], t[1]), lambda r, m, k, n: [unif(r, m, k), unif(r, m, k)]),
    "sub": (lambda t: nc.sub(t[0], t[1]), lambda r, m, k, n: [unif(r, m, k), unif(r, m, k)]),
    "mul": (lambda t: nc.mul(t[0], t[1]), lambda r, m, k, n: [unif(r, m, k), unif(r, m, k)]),
    "tanh": (lambda t: nc.tanh(t[0]), lambda r, m, k, n: [unif(r, m, k)]),
    "relu": (lambda t: nc.relu(t[0]), lambda r, m, k, n: [unif(r, m, k)]),
    "exp": (lambda t: nc.exp(t[0]), lambda r, m, k, n: [unif(r, m, k)]),
    "scale": (lambda t: nc.scale(t[0], 0.7), lambda r, m, k, n: [unif(r, m, k)]),
    "softmax": (lambda t: nc.softmax(t[0]), lambda r, m, k, n: [unif(r, m, k)]),
    "layer_norm": (lambda t: nc.layer_norm(t[0], t[1], t[2]),
                   lambda r, m, k, n: [unif(r, m, k), unif(r, k), unif(r, k)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradient_sweep(name):
    fn, make = PRIMITIVES[name]
    rng = np.random.default_rng(7)
    for _ in range(5):
        m, k, n = rng.integers(1, 9, size=3)
        if name == "layer_norm":
            k = max(k, 2)
        xs = make(rng, m, k, n)
        if name == "relu":
            # keep finite differences off the kink
            xs = [x + 0.01 * np.sign(x) for x in xs]
        y = fn([Tensor(x) for x in xs])
        w = unif(rng, *y.shape)
        assert check(lambda t: weighted_sum(fn(t), w), xs) <= 1e-6
