"""Reverse-mode automatic differentiation over numpy arrays.

A Value wraps an ndarray plus a closure that routes the output gradient to
its inputs. Calling :func:`backward` on a scalar loss runs one reverse
topological sweep, accumulates gradients additively across fan-out, frees
intermediate gradients as soon as they have been consumed, and clears the
recorded graph afterwards. Computations are deterministic: identical inputs
replay to bit-identical results in single-threaded mode.

Only the shapes and operations the network needs are supported; broadcasting
follows numpy and gradients of broadcast operands are reduced back to their
original shape.
"""

import numpy as np


class Value:
    """A differentiable array node in the computation record."""

    __slots__ = ("data", "grad", "_prev", "_backward")

    def __init__(self, data, _prev=(), _backward=None, dtype=None):
        if isinstance(data, Value):
            raise TypeError("cannot wrap a Value in a Value")
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Value(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar; every op lives at module level
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_value(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_value(x, like=None):
    if isinstance(x, Value):
        return x
    dtype = like.data.dtype if like is not None else None
    return Value(np.asarray(x, dtype=dtype))


def _accumulate(node, g):
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = as_value(a, like=b if isinstance(b, Value) else None)
    b = as_value(b, like=a)
    out = Value(a.data + b.data, _prev=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))
    out._backward = _bw
    return out


def sub(a, b):
    a = as_value(a, like=b if isinstance(b, Value) else None)
    b = as_value(b, like=a)
    out = Value(a.data - b.data, _prev=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))
    out._backward = _bw
    return out


def mul(a, b):
    a = as_value(a, like=b if isinstance(b, Value) else None)
    b = as_value(b, like=a)
    out = Value(a.data * b.data, _prev=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
    out._backward = _bw
    return out


def div(a, b):
    a = as_value(a, like=b if isinstance(b, Value) else None)
    b = as_value(b, like=a)
    out = Value(a.data / b.data, _prev=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * out.data / b.data, b.data.shape))
    out._backward = _bw
    return out


def neg(a):
    out = Value(-a.data, _prev=(a,))

    def _bw(g):
        _accumulate(a, -g)
    out._backward = _bw
    return out


def square(a):
    out = Value(a.data * a.data, _prev=(a,))

    def _bw(g):
        _accumulate(a, 2.0 * a.data * g)
    out._backward = _bw
    return out


def sqrt(a):
    out = Value(np.sqrt(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g / (2.0 * out.data))
    out._backward = _bw
    return out


def exp(a):
    out = Value(np.exp(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g * out.data)
    out._backward = _bw
    return out


def log(a):
    out = Value(np.log(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g / a.data)
    out._backward = _bw
    return out


def _sigmoid_np(x):
    # stable on both tails; tanh saturates cleanly and is fast
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _softplus_np(x):
    # log(1 + e^x) without overflow; exact identity x + log1p(e^-x) for x > 0
    ax = np.abs(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-ax))


def sigmoid(a):
    out = Value(_sigmoid_np(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g * out.data * (1.0 - out.data))
    out._backward = _bw
    return out


def tanh(a):
    out = Value(np.tanh(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g * (1.0 - out.data * out.data))
    out._backward = _bw
    return out


def softplus(a):
    out = Value(_softplus_np(a.data), _prev=(a,))

    def _bw(g):
        _accumulate(a, g * _sigmoid_np(a.data))
    out._backward = _bw
    return out


def mish(a):
    """x * tanh(softplus(x)), overflow-safe on both tails."""
    sp = _softplus_np(a.data)
    t = np.tanh(sp)
    out = Value(a.data * t, _prev=(a,))

    def _bw(g):
        sig = _sigmoid_np(a.data)
        _accumulate(a, g * (t + a.data * (1.0 - t * t) * sig))
    out._backward = _bw
    return out


def leaky_relu(a, slope=0.2):
    y = np.where(a.data > 0, a.data, slope * a.data)
    out = Value(y, _prev=(a,))

    def _bw(g):
        _accumulate(a, g * np.where(a.data > 0, 1.0, slope))
    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    out = Value(a.data.reshape(shape), _prev=(a,))

    def _bw(g):
        _accumulate(a, g.reshape(a.data.shape))
    out._backward = _bw
    return out


def transpose(a, axes):
    inverse = np.argsort(axes)
    out = Value(a.data.transpose(axes), _prev=(a,))

    def _bw(g):
        _accumulate(a, g.transpose(inverse))
    out._backward = _bw
    return out


def concat(parts, axis=-1):
    parts = tuple(parts)
    out = Value(np.concatenate([p.data for p in parts], axis=axis), _prev=parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])
    out._backward = _bw
    return out


def stack(parts, axis=0):
    parts = tuple(parts)
    out = Value(np.stack([p.data for p in parts], axis=axis), _prev=parts)

    def _bw(g):
        slabs = np.moveaxis(g, axis, 0)
        for p, slab in zip(parts, slabs):
            _accumulate(p, slab)
    out._backward = _bw
    return out


def index_axis(a, idx, axis=0):
    """Pick one index along an axis (the axis is removed)."""
    sel = (slice(None),) * axis + (idx,)
    data = a.data[sel]  # view; downstream ops never mutate operands
    out = Value(data, _prev=(a,))

    def _bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        sel = [slice(None)] * a.data.ndim
        sel[axis] = idx
        a.grad[tuple(sel)] += g
    out._backward = _bw
    return out


def slice_axis(a, lo, hi, axis=-1):
    sel = [slice(None)] * a.data.ndim
    sel[axis] = slice(lo, hi)
    sel = tuple(sel)
    out = Value(a.data[sel], _prev=(a,))

    def _bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[sel] += g
    out._backward = _bw
    return out


def broadcast_axis(a, axis, n):
    """Insert a new axis of length n by copying."""
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    shape[axis] = n
    out = Value(np.broadcast_to(expanded, shape).copy(), _prev=(a,))

    def _bw(g):
        _accumulate(a, g.sum(axis=axis))
    out._backward = _bw
    return out


def sum_values(a, axis=None, keepdims=False):
    out = Value(a.data.sum(axis=axis, keepdims=keepdims), _prev=(a,))

    def _bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# contractions


def matmul(a, b):
    """a @ b for 2-D operands or stacked operands with identical batch dims."""
    a = as_value(a)
    b = as_value(b)
    out = Value(np.matmul(a.data, b.data), _prev=(a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))
    out._backward = _bw
    return out


def einsum2(spec, a, b):
    """Two-operand einsum without repeated indices inside one operand."""
    in_spec, out_sub = spec.split("->")
    sub_a, sub_b = in_spec.split(",")
    out = Value(np.einsum(spec, a.data, b.data, optimize=True), _prev=(a, b))

    def _bw(g):
        _accumulate(a, np.einsum(f"{out_sub},{sub_b}->{sub_a}", g, b.data, optimize=True))
        _accumulate(b, np.einsum(f"{out_sub},{sub_a}->{sub_b}", g, a.data, optimize=True))
    out._backward = _bw
    return out


def affine(x, w, b=None):
    """y = x W + b over the trailing dimension, any leading shape."""
    lead = x.data.shape[:-1]
    d_in = x.data.shape[-1]
    d_out = w.data.shape[-1]
    flat = reshape(x, (-1, d_in)) if x.data.ndim != 2 else x
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    if x.data.ndim != 2:
        y = reshape(y, lead + (d_out,))
    return y


def gru_gates(gi, gh, h_prev):
    """Fused GRU gate math, gate order (reset, update, candidate):

        r = sigmoid(gi_r + gh_r)
        z = sigmoid(gi_z + gh_z)
        n = tanh(gi_n + r * gh_n)
        out = (1 - z) * n + z * h_prev

    gi and gh are the stacked input-side / hidden-side preactivations of
    shape (rows, 3H); h_prev is (rows, H). Fusing the ~10 elementwise steps
    into one recorded node keeps the sequence loops lean.
    """
    rows, h3 = gi.data.shape
    h = h3 // 3
    gi_d, gh_d = gi.data, gh.data
    r = _sigmoid_np(gi_d[:, :h] + gh_d[:, :h])
    z = _sigmoid_np(gi_d[:, h:2 * h] + gh_d[:, h:2 * h])
    gh_n = gh_d[:, 2 * h:]
    n = np.tanh(gi_d[:, 2 * h:] + r * gh_n)
    out = Value((1.0 - z) * n + z * h_prev.data, _prev=(gi, gh, h_prev))

    def _bw(g):
        dn = g * ((1.0 - z) * (1.0 - n * n))
        dz = g * ((h_prev.data - n) * (z * (1.0 - z)))
        dr_pre = (dn * gh_n) * (r * (1.0 - r))
        dgi = np.concatenate([dr_pre, dz, dn], axis=1)
        dgh = np.concatenate([dr_pre, dz, dn * r], axis=1)
        _accumulate(gi, dgi)
        _accumulate(gh, dgh)
        _accumulate(h_prev, g * z)
    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# softmax and loss


def masked_softmax(scores, axis=-1, mask=None, mask_value=-10000.0):
    """Numerically stable softmax; `mask` marks excluded slots (True = excluded)
    which receive `mask_value` added to their logit before normalization.
    """
    x = scores.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if np.all(mask, axis=axis).any():
            raise ValueError("masked_softmax: fully masked row")
        x = x + mask_value * mask.astype(x.dtype)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=axis, keepdims=True)
    out = Value(w, _prev=(scores,))

    def _bw(g):
        inner = (g * w).sum(axis=axis, keepdims=True)
        _accumulate(scores, w * (g - inner))
    out._backward = _bw
    return out


def gaussian_nll(delta_y, mu, sigma_sq, step_axis=0):
    """Gaussian negative log likelihood without the constant pi term:

        0.5 log(2 sigma^2) + (dy - mu)^2 / (2 sigma^2)

    summed over agents and state variables and averaged over decoder steps
    (and any batch axes before `step_axis`). As a function of sigma^2 each
    element is minimized at sigma^2 = (dy - mu)^2, and it vanishes when
    dy == mu and 2 sigma^2 == 1.
    """
    mu_v = as_value(mu)
    sq_v = as_value(sigma_sq, like=mu_v)
    dy_v = as_value(delta_y, like=mu_v)
    if np.any(sq_v.data <= 0.0):
        raise ValueError("gaussian_nll: sigma_sq must be strictly positive")
    resid = sub(dy_v, mu_v)
    quad = div(square(resid), 2.0 * sq_v)
    logterm = mul(log(mul(sq_v, 2.0)), 0.5)
    total = sum_values(add(logterm, quad))
    n_avg = float(np.prod(mu_v.data.shape[:step_axis + 1]))
    return mul(total, 1.0 / n_avg)


# ---------------------------------------------------------------------------
# the reverse sweep


def backward(loss):
    """Populate gradients of every Value reachable from `loss`.

    The sweep runs in reverse topological order, accumulates additively
    across fan-out, frees intermediate gradients once consumed, and clears
    the record so the graph memory is released.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack_.append((child, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._prev:
            # intermediate: gradient has been fully propagated, free it
            node.grad = None if node is not loss else node.grad
    for node in topo:
        node._backward = None
        node._prev = ()


def zero_grads(values):
    for v in values:
        v.grad = None


# ---------------------------------------------------------------------------
# finite-difference verification harness


def gradcheck(fn, inputs, h=1e-5, rtol=1e-4, atol=1e-8, max_coords=None, rng=None):
    """Compare analytic gradients of scalar-valued `fn(*inputs)` against
    central differences.

    Inputs must be float64 Values. Checks every coordinate, or a random
    subset of `max_coords` per input. Returns the worst relative error,
    raising AssertionError when |analytic - numeric| exceeds
    atol + rtol * max(|analytic|, |numeric|).
    """
    rng = rng or np.random.default_rng(0)
    for x in inputs:
        if x.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 inputs")

    zero_grads(inputs)
    loss = fn(*inputs)
    backward(loss)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    zero_grads(inputs)

    worst = 0.0
    for x, ana in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(fn(*inputs).data)
            flat[c] = orig - h
            f_minus = float(fn(*inputs).data)
            flat[c] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            a = ana.reshape(-1)[c]
            err = abs(a - num)
            bound = atol + rtol * max(abs(a), abs(num))
            denom = max(abs(a), abs(num))
            if denom > atol:
                worst = max(worst, err / denom)
            if err > bound:
                raise AssertionError(
                    f"gradient mismatch at coord {c}: analytic {a!r} vs numeric {num!r} "
                    f"(|diff|={err:.3e}, bound={bound:.3e})")
    return worst
