"""Non-graph baselines: static copy-forward, per-agent and joint recurrent
forecasters trained with the same NLL protocol, and correlation-based pair
scorers (trajectory features and trained hidden states)."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ConfigError, UndefinedCorrelationError
from .evaluation import _pearson_flat
from .optim import AdamState, adam_step, clip_global_norm


@dataclass
class ForecasterConfig:
    state_dim: int
    hidden_dim: int = 256
    n_layers: int = 2
    t_enc: int = 50
    t_dec: int = 50
    mode: str = "single"   # "single": weight-shared per agent; "joint": concatenated state
    n_agents: int = 0      # fixed at training time in joint mode

    def __post_init__(self):
        if self.mode not in ("single", "joint"):
            raise ConfigError(f"unknown forecaster mode {self.mode!r}")
        if self.mode == "joint" and self.n_agents < 1:
            raise ConfigError("joint mode needs the trained agent count")

    @property
    def input_dim(self):
        return self.state_dim * self.n_agents if self.mode == "joint" else self.state_dim


def init_forecaster_params(cfg, rng, dtype=np.float32):
    params = {}
    nn.gru_params(params, "gru0", rng, cfg.input_dim, cfg.hidden_dim, dtype)
    for layer in range(1, cfg.n_layers):
        nn.gru_params(params, f"gru{layer}", rng, cfg.hidden_dim, cfg.hidden_dim, dtype)
    nn.affine_params(params, "head.mu", rng, cfg.hidden_dim, cfg.input_dim, dtype)
    nn.affine_params(params, "head.sigma", rng, cfg.hidden_dim, cfg.input_dim, dtype)
    return params


def _rows_of(cfg, window):
    """Flatten a (B, T, N, S) window into independent recurrent rows."""
    b, t, n, s = window.shape
    if cfg.mode == "joint":
        if n != cfg.n_agents:
            raise ConfigError(f"joint forecaster trained for N={cfg.n_agents}, got N={n}")
        return window.reshape(b, t, n * s), (b, n, s)
    return window.transpose(0, 2, 1, 3).reshape(b * n, t, s), (b, n, s)


def _step_cells(params, cfg, hiddens, x):
    """One stacked-GRU step; returns the new hidden list and top hidden."""
    new_hiddens = []
    inp = x
    for layer in range(cfg.n_layers):
        cell = nn.gru_view(params, f"gru{layer}")
        h = nn.gru_cell(cell, hiddens[layer], inp)
        new_hiddens.append(h)
        inp = h
    return new_hiddens, inp


def forecaster_encode(params, cfg, window):
    """Run the stacked GRU over the encode window.

    Returns (hidden list, top-layer hidden history as a (T, rows, H) Value,
    rows shape info)."""
    rows, shape3 = _rows_of(cfg, np.asarray(window))
    n_rows, t = rows.shape[0], rows.shape[1]
    dtype = params["head.mu.w"].data.dtype
    hiddens = [ad.as_value(np.zeros((n_rows, cfg.hidden_dim), dtype=dtype))
               for _ in range(cfg.n_layers)]
    history = []
    for step in range(t):
        x = ad.as_value(np.asarray(rows[:, step], dtype=dtype))
        hiddens, top = _step_cells(params, cfg, hiddens, x)
        history.append(top)
    return hiddens, ad.stack(history, axis=0), shape3


def forecaster_rollout(params, cfg, window, noise=None):
    """Closed-loop delta prediction; returns (mu, sigma_sq, states) Values of
    shape (rows, T_dec, D) plus the (b, n, s) shape info."""
    rows, shape3 = _rows_of(cfg, np.asarray(window))
    dtype = params["head.mu.w"].data.dtype
    hiddens, _, _ = forecaster_encode(params, cfg, window)
    x_cur = ad.as_value(np.asarray(rows[:, -1], dtype=dtype))
    mus, sqs, xs = [], [], []
    for step in range(cfg.t_dec):
        hiddens, top = _step_cells(params, cfg, hiddens, x_cur)
        mu = nn.apply_affine(params, "head.mu", top)
        sq = ad.softplus(nn.apply_affine(params, "head.sigma", top)) + 1e-6
        sample = mu if noise is None else mu + ad.sqrt(sq) * noise[step]
        x_cur = x_cur + sample
        mus.append(mu)
        sqs.append(sq)
        xs.append(x_cur)
    return (ad.stack(mus, axis=1), ad.stack(sqs, axis=1), ad.stack(xs, axis=1)), shape3


def forecaster_loss(params, cfg, window, noise=None):
    rows, _ = _rows_of(cfg, np.asarray(window))
    dtype = params["head.mu.w"].data.dtype
    (mu, sq, _), _ = forecaster_rollout(params, cfg, window[:, :cfg.t_enc], noise=noise)
    targets = np.diff(np.asarray(rows[:, cfg.t_enc - 1:], dtype=dtype), axis=1)
    return ad.gaussian_nll(targets, mu, sq, step_axis=1)


def train_forecaster(cfg, data, epochs, batch_size=32, learning_rate=5e-4,
                     clip_norm=5.0, seed=0, dtype=np.float32):
    """Same optimization protocol as the main model; returns trained params."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    params = init_forecaster_params(cfg, rng, dtype)
    adam = AdamState(learning_rate=learning_rate)
    n = data.shape[0]
    for epoch in range(epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((seed, 1, epoch))).permutation(n)
        for batch_idx, lo in enumerate(range(0, n, batch_size)):
            window = np.asarray(data[order[lo:lo + batch_size]], dtype=dtype)
            rows_n = window.shape[0] * (1 if cfg.mode == "joint" else window.shape[2])
            noise_rng = np.random.default_rng(
                np.random.SeedSequence((seed, 2, epoch, batch_idx)))
            noise = noise_rng.standard_normal(
                (cfg.t_dec, rows_n, cfg.input_dim), dtype=dtype)
            loss = forecaster_loss(params, cfg, window, noise=noise)
            ad.backward(loss)
            if clip_norm > 0:
                clip_global_norm(params, clip_norm)
            adam_step(params, adam)
            ad.zero_grads(params.values())
    return params


def forecaster_predict(params, cfg, windows):
    """Noise-free closed-loop paths, back in (B, T_dec, N, S) layout."""
    (mu, _sq, states), (b, n, s) = forecaster_rollout(params, cfg, windows)
    del mu
    path = states.data
    if cfg.mode == "joint":
        return path.reshape(b, cfg.t_dec, n, s)
    return path.reshape(b, n, cfg.t_dec, s).transpose(0, 2, 1, 3)


def static_forecast(windows, t_dec):
    """Copy the last observed state forward: the zero-parameter floor."""
    last = np.asarray(windows)[:, -1]
    return np.repeat(last[:, None], t_dec, axis=1)


def corr_path_scores(windows):
    """|Pearson| between flattened per-agent trajectory feature vectors over
    the encode window. Returns (samples, N, N) with NaN at skipped
    (zero-variance) pairs and a skip count."""
    w = np.asarray(windows, dtype=np.float64)
    b, t, n, s = w.shape
    feats = w.transpose(0, 2, 1, 3).reshape(b, n, t * s)
    scores = np.zeros((b, n, n))
    skipped = 0
    for sample in range(b):
        for i in range(n):
            for j in range(i + 1, n):
                try:
                    c = abs(_pearson_flat(feats[sample, i], feats[sample, j]))
                except UndefinedCorrelationError:
                    c = np.nan
                    skipped += 1
                scores[sample, i, j] = scores[sample, j, i] = c
    return scores, skipped


def corr_lstm_scores(params, cfg, windows):
    """|Pearson| between two agents' final top-layer hidden states from a
    trained per-agent forecaster."""
    if cfg.mode != "single":
        raise ConfigError("hidden-state correlation needs the per-agent forecaster")
    hiddens, _, (b, n, _s) = forecaster_encode(params, cfg, windows)
    final = hiddens[-1].data.reshape(b, n, cfg.hidden_dim).astype(np.float64)
    return hidden_state_scores(final)


def hidden_state_scores(final_hiddens):
    """Score matrix from per-agent hidden vectors (samples, N, H)."""
    b, n, _h = final_hiddens.shape
    scores = np.zeros((b, n, n))
    skipped = 0
    for sample in range(b):
        for i in range(n):
            for j in range(i + 1, n):
                try:
                    c = abs(_pearson_flat(final_hiddens[sample, i], final_hiddens[sample, j]))
                except UndefinedCorrelationError:
                    c = np.nan
                    skipped += 1
                scores[sample, i, j] = scores[sample, j, i] = c
    return scores, skipped
