import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rain.autodiff as ad
from rain import nn
from rain.autodiff import Value, backward, gradcheck

SEEDS = range(5)

LINEAR_TOL = dict(rtol=1e-6, atol=1e-9)
SMOOTH_TOL = dict(rtol=1e-4, atol=1e-8)


def _rand(rng, *shape):
    return Value(rng.standard_normal(shape))


def _quadratic(v):
    # scalar-valued wrapper so linear ops get a well-conditioned loss
    return ad.sum_values(ad.square(v))


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_affine(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _rand(rng, 3, 4), _rand(rng, 4, 2), _rand(rng, 2)
    gradcheck(lambda x, w, b: _quadratic(ad.affine(x, w, b)), [x, w, b], **LINEAR_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_affine_identity(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 3))
    w = Value(np.eye(3))
    b = Value(np.zeros(3))
    y = ad.affine(Value(x), w, b)
    assert np.array_equal(y.data, x)


def test_affine_hand_example():
    y = ad.affine(Value(np.array([[1.0, 2.0]])), Value(np.eye(2)), Value(np.array([3.0, 3.0])))
    assert np.array_equal(y.data, [[4.0, 5.0]])


def test_affine_shape_mismatch():
    with pytest.raises(ValueError):
        ad.affine(Value(np.zeros((2, 3))), Value(np.zeros((4, 2))))


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise_ops(seed):
    rng = np.random.default_rng(seed)
    x = _rand(rng, 4, 3)
    y = Value(rng.standard_normal((4, 3)) + 3.0)  # positive shift for log/sqrt/div
    gradcheck(lambda x, y: ad.sum_values(x * y + x / y - ad.square(x)), [x, y], **SMOOTH_TOL)
    gradcheck(lambda y: ad.sum_values(ad.log(y) + ad.sqrt(y)), [y], **SMOOTH_TOL)
    gradcheck(lambda x: ad.sum_values(ad.exp(x) + ad.sigmoid(x) + ad.tanh(x)), [x], **SMOOTH_TOL)
    gradcheck(lambda x: ad.sum_values(ad.softplus(x) + ad.mish(x)), [x], **SMOOTH_TOL)
    gradcheck(lambda x: ad.sum_values(ad.leaky_relu(x + 0.123)), [x], **SMOOTH_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_shape_ops(seed):
    rng = np.random.default_rng(seed)
    x, y = _rand(rng, 2, 3, 4), _rand(rng, 2, 3, 4)

    def fn(x, y):
        cat = ad.concat([x, y], axis=-1)
        t = ad.transpose(cat, (1, 0, 2))
        r = ad.reshape(t, (3, 16))
        s = ad.stack([r, r], axis=0)
        sl = ad.slice_axis(s, 2, 10, axis=-1)
        ix = ad.index_axis(sl, 1, axis=0)
        br = ad.broadcast_axis(ix, 1, 5)
        return _quadratic(br)

    gradcheck(fn, [x, y], **LINEAR_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_and_einsum(seed):
    rng = np.random.default_rng(seed)
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    gradcheck(lambda a, b: _quadratic(ad.matmul(a, b)), [a, b], **LINEAR_TOL)
    bb = [_rand(rng, 2, 3, 4), _rand(rng, 2, 4, 5)]
    gradcheck(lambda a, b: _quadratic(ad.matmul(a, b)), bb, **LINEAR_TOL)
    k, q = _rand(rng, 2, 3, 2, 2, 4), _rand(rng, 2, 3, 2, 2, 4)
    gradcheck(lambda k, q: _quadratic(ad.einsum2("btimd,btjmd->btijm", k, q)),
              [k, q], **SMOOTH_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_broadcast_add_mul(seed):
    rng = np.random.default_rng(seed)
    x, b = _rand(rng, 4, 3), _rand(rng, 3)
    gradcheck(lambda x, b: ad.sum_values(ad.square(x + b) + x * b), [x, b], **SMOOTH_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_masked_softmax(seed):
    rng = np.random.default_rng(seed)
    x = _rand(rng, 3, 5)
    gradcheck(lambda x: _quadratic(ad.masked_softmax(x, axis=1)), [x], **SMOOTH_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_gru_cell(seed):
    rng = np.random.default_rng(seed)
    params = {}
    nn.gru_params(params, "g", rng, 3, 4, np.float64)
    h, x = _rand(rng, 2, 4), _rand(rng, 2, 3)

    def fn(h, x, wih, whh, bih, bhh):
        cell = nn.GruCellParams(w_ih=wih, w_hh=whh, b_ih=bih, b_hh=bhh)
        return _quadratic(nn.gru_cell(cell, h, x))

    blocks = [params["g.w_ih"], params["g.w_hh"], params["g.b_ih"], params["g.b_hh"]]
    gradcheck(fn, [h, x] + blocks, **SMOOTH_TOL)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_gaussian_nll(seed):
    rng = np.random.default_rng(seed)
    dy = rng.standard_normal((2, 3, 2))
    mu = _rand(rng, 2, 3, 2)
    raw = _rand(rng, 2, 3, 2)

    def fn(mu, raw):
        return ad.gaussian_nll(dy, mu, ad.softplus(raw) + 1e-6)

    gradcheck(fn, [mu, raw], **SMOOTH_TOL)


def test_gru_zero_parameters_fixed_point():
    params = {}
    nn.gru_params(params, "g", np.random.default_rng(0), 3, 4, np.float64)
    for v in params.values():
        v.data[:] = 0.0
    cell = nn.gru_view(params, "g")
    h = nn.gru_cell(cell, Value(np.zeros((2, 4))), Value(np.ones((2, 3))))
    assert np.array_equal(h.data, np.zeros((2, 4)))


def test_gru_saturated_update_gate_copies_hidden():
    rng = np.random.default_rng(1)
    params = {}
    nn.gru_params(params, "g", rng, 3, 4, np.float64)
    params["g.b_ih"].data[4:8] = 50.0   # update-gate slice of the (r, z, n) stack
    params["g.b_hh"].data[4:8] = 50.0
    cell = nn.gru_view(params, "g")
    h_prev = Value(rng.standard_normal((2, 4)))
    h = nn.gru_cell(cell, h_prev, Value(rng.standard_normal((2, 3))))
    assert np.allclose(h.data, h_prev.data, atol=1e-12)


def test_mish_reference_values():
    assert float(ad.mish(Value(np.float64(0.0))).data) == 0.0
    # direct evaluation of x * tanh(log(1 + e^x)) at x = 1
    assert abs(float(ad.mish(Value(np.float64(1.0))).data) - 0.8650983882673103) < 1e-12
    m_neg = float(ad.mish(Value(np.float64(-20.0))).data)
    assert -1e-7 < m_neg < 0.0
    assert abs(float(ad.mish(Value(np.float64(20.0))).data) - 20.0) < 1e-8


def test_masked_softmax_uniform_and_saturation():
    w = ad.masked_softmax(Value(np.zeros((1, 4))), axis=1)
    assert np.allclose(w.data, 0.25, atol=1e-15)
    w2 = ad.masked_softmax(Value(np.array([[0.0, -10000.0]])), axis=1)
    assert abs(w2.data[0, 0] - 1.0) < 1e-4
    assert w2.data[0, 1] < 1e-4


def test_masked_softmax_mask_argument():
    x = Value(np.zeros((2, 3)))
    mask = np.array([[False, True, False], [False, False, True]])
    w = ad.masked_softmax(x, axis=1, mask=mask)
    assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(w.data[mask] < 1e-4)


def test_masked_softmax_fully_masked_row_rejected():
    with pytest.raises(ValueError):
        ad.masked_softmax(Value(np.zeros((1, 3))), axis=1,
                          mask=np.ones((1, 3), dtype=bool))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1),
       st.floats(min_value=-50.0, max_value=50.0))
def test_masked_softmax_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 6))
    a = ad.masked_softmax(Value(x), axis=1).data
    b = ad.masked_softmax(Value(x + shift), axis=1).data
    assert np.abs(a - b).max() < 1e-12
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)


def test_gaussian_nll_zero_at_reference_point():
    mu = np.random.default_rng(0).standard_normal((3, 2, 2))
    loss = ad.gaussian_nll(mu, Value(mu.copy()), Value(np.full(mu.shape, 0.5)))
    assert float(loss.data) == 0.0


def test_gaussian_nll_minimized_at_squared_residual():
    # 1-D analytic oracle: d/ds [0.5 log(2s) + r^2/(2s)] = 0 at s = r^2
    r = 0.7
    best = r ** 2
    grid = np.linspace(0.2 * best, 5.0 * best, 401)
    losses = [float(ad.gaussian_nll(np.array([r]), Value(np.array([0.0])),
                                    Value(np.array([s]))).data) for s in grid]
    assert abs(grid[int(np.argmin(losses))] - best) < 0.02 * best


def test_gaussian_nll_mu_gradient_closed_form():
    rng = np.random.default_rng(3)
    dy = rng.standard_normal((1, 2, 3))
    mu = Value(rng.standard_normal((1, 2, 3)))
    sq = Value(np.abs(rng.standard_normal((1, 2, 3))) + 0.5)
    loss = ad.gaussian_nll(dy, mu, sq)
    backward(loss)
    assert np.abs(mu.grad - (mu.data - dy) / sq.data).max() < 1e-6


def test_gaussian_nll_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        ad.gaussian_nll(np.zeros(2), Value(np.zeros(2)), Value(np.array([0.5, 0.0])))


def test_backward_sum_gives_ones():
    x = Value(np.random.default_rng(0).standard_normal((3, 4)))
    backward(ad.sum_values(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_gives_power_rule():
    x = Value(np.random.default_rng(1).standard_normal((5,)))
    data = x.data.copy()
    backward(ad.sum_values(x * x))
    assert np.allclose(x.grad, 2 * data, atol=1e-14)


def test_backward_fanout_accumulates_twice():
    def f(v):
        return ad.sum_values(ad.square(v))

    x1 = Value(np.array([1.0, 2.0]))
    backward(f(x1))
    single = x1.grad.copy()

    x2 = Value(np.array([1.0, 2.0]))
    backward(f(x2) + f(x2))
    assert np.array_equal(x2.grad, 2.0 * single)


def test_backward_requires_scalar():
    x = Value(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        backward(x + x)


def test_backward_clears_record():
    x = Value(np.array([1.0, 2.0]))
    y = ad.sum_values(ad.square(x))
    backward(y)
    assert y._prev == () and y._backward is None


def test_replay_is_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 6))
    w = rng.standard_normal((6, 3))

    def run():
        out = ad.masked_softmax(ad.mish(ad.matmul(Value(x), Value(w))), axis=1)
        return float(ad.sum_values(ad.square(out)).data)

    assert run() == run()
