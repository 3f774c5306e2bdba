"""Neural building blocks on top of the autodiff engine: parameter
initialization, affine/MLP application, and the GRU cell."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value


def uniform_init(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Value(rng.uniform(-bound, bound, size=shape).astype(dtype))


def affine_params(params, prefix, rng, d_in, d_out, dtype, bias=True):
    """Register weight (and optional bias) Values under `prefix` in `params`."""
    params[f"{prefix}.w"] = uniform_init(rng, d_in, (d_in, d_out), dtype)
    if bias:
        params[f"{prefix}.b"] = uniform_init(rng, d_in, (d_out,), dtype)


def apply_affine(params, prefix, x):
    return ad.affine(x, params[f"{prefix}.w"], params.get(f"{prefix}.b"))


def mlp_params(params, prefix, rng, dims, dtype):
    """dims = (d_in, hidden..., d_out); one affine per consecutive pair."""
    for li, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        affine_params(params, f"{prefix}.l{li}", rng, d_in, d_out, dtype)


def apply_mlp(params, prefix, x, n_layers, activation=ad.mish, last_activation=None):
    for li in range(n_layers):
        x = apply_affine(params, f"{prefix}.l{li}", x)
        act = activation if li < n_layers - 1 else last_activation
        if act is not None:
            x = act(x)
    return x


@dataclass
class GruCellParams:
    """Stacked gate parameters, gate order (reset, update, candidate)."""

    w_ih: Value  # (d_in, 3H)
    w_hh: Value  # (H, 3H)
    b_ih: Value  # (3H,)
    b_hh: Value  # (3H,)

    @property
    def hidden_dim(self):
        return self.w_hh.data.shape[0]

    @property
    def input_dim(self):
        return self.w_ih.data.shape[0]


def gru_params(params, prefix, rng, d_in, d_hidden, dtype):
    params[f"{prefix}.w_ih"] = uniform_init(rng, d_in, (d_in, 3 * d_hidden), dtype)
    params[f"{prefix}.w_hh"] = uniform_init(rng, d_hidden, (d_hidden, 3 * d_hidden), dtype)
    params[f"{prefix}.b_ih"] = uniform_init(rng, d_in, (3 * d_hidden,), dtype)
    params[f"{prefix}.b_hh"] = uniform_init(rng, d_hidden, (3 * d_hidden,), dtype)


def gru_view(params, prefix):
    return GruCellParams(w_ih=params[f"{prefix}.w_ih"], w_hh=params[f"{prefix}.w_hh"],
                         b_ih=params[f"{prefix}.b_ih"], b_hh=params[f"{prefix}.b_hh"])


def gru_cell(cell, h_prev, x_in):
    """Standard GRU update for 2-D (rows, features) operands."""
    if x_in.data.shape[-1] != cell.input_dim:
        raise ValueError(f"gru input dim {x_in.data.shape[-1]} != {cell.input_dim}")
    if h_prev.data.shape[-1] != cell.hidden_dim:
        raise ValueError(f"gru hidden dim {h_prev.data.shape[-1]} != {cell.hidden_dim}")
    gi = ad.affine(x_in, cell.w_ih, cell.b_ih)
    return gru_cell_pregate(cell, h_prev, gi)


def gru_cell_pregate(cell, h_prev, gi):
    """GRU update with the input-side gate preactivations already computed
    (lets a sequence encoder batch all input projections into one matmul)."""
    gh = ad.affine(h_prev, cell.w_hh, cell.b_hh)
    return ad.gru_gates(gi, gh, h_prev)
