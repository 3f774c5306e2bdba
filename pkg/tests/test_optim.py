import numpy as np

from rain.autodiff import Value
from rain.optim import AdamState, adam_step, clip_global_norm


def _param(data):
    v = Value(np.asarray(data, dtype=np.float64))
    return v


def test_zero_gradient_leaves_parameters_unchanged():
    p = _param([1.0, -2.0])
    p.grad = np.zeros(2)
    state = AdamState()
    adam_step({"p": p}, state)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert state.step_count == 1


def test_constant_gradient_displacement_approaches_lr():
    # steady state: m_hat -> g, v_hat -> g^2, step -> lr * sign(g)
    p = _param(np.zeros(3))
    state = AdamState(learning_rate=5e-4)
    g = np.array([0.3, -2.0, 7.5])
    prev = p.data.copy()
    for _ in range(300):
        p.grad = g.copy()
        prev = p.data.copy()
        adam_step({"p": p}, state)
    step = np.abs(p.data - prev)
    assert np.allclose(step, 5e-4, rtol=1e-3)
    assert np.all(np.sign(prev - p.data) == np.sign(g))


def test_identical_groups_get_identical_updates():
    a, b = _param([1.0, 2.0]), _param([1.0, 2.0])
    g = np.array([0.5, -0.25])
    a.grad, b.grad = g.copy(), g.copy()
    adam_step({"a": a, "b": b}, AdamState())
    assert np.array_equal(a.data, b.data)


def test_updates_are_deterministic():
    def run():
        p = _param([0.1, 0.2, 0.3])
        state = AdamState()
        for i in range(10):
            p.grad = np.array([1.0, -1.0, 0.5]) * (i + 1)
            adam_step({"p": p}, state)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_clip_global_norm_rescales():
    p, q = _param(np.zeros(2)), _param(np.zeros(2))
    p.grad = np.array([3.0, 0.0])
    q.grad = np.array([0.0, 4.0])
    norm = clip_global_norm({"p": p, "q": q}, 1.0)
    assert abs(norm - 5.0) < 1e-12
    joint = np.sqrt((p.grad ** 2).sum() + (q.grad ** 2).sum())
    assert abs(joint - 1.0) < 1e-12


def test_clip_noop_below_threshold():
    p = _param(np.zeros(2))
    p.grad = np.array([0.3, 0.4])
    norm = clip_global_norm({"p": p}, 5.0)
    assert abs(norm - 0.5) < 1e-12
    assert np.array_equal(p.grad, [0.3, 0.4])
