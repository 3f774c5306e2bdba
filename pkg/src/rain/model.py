"""The interaction-inference network: trajectory encoder, same-time pairwise
attention, graph extraction (MLP-sigmoid or GATv2-style scoring), and the
weighted-message Gaussian decoder.

All parameters are shared across agents, so every forward pass is
agent-permutation equivariant. Arrays are batch-first throughout:
(B, T, N, S) windows in, (B, N, N) graph estimates out.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Value
from .errors import ConfigError

DIAG_MASK_VALUE = -10000.0

CONFIG_SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    state_dim: int
    n_agents: int
    hidden_dim: int = 256
    embed_dim: int = 128
    heads: int = 4
    head_dim: int = 32
    embed_hidden: int = 64
    graph_hidden: tuple = (32, 16)
    decoder_value_dim: int = 128
    decoder_hidden: int = 256
    use_pa: bool = True
    graph_variant: str = "mlp_sigmoid"
    t_enc: int = 50
    t_dec: int = 50
    target_mode: str = "delta"

    def __post_init__(self):
        if self.heads * self.head_dim != self.embed_dim:
            raise ConfigError(f"heads*head_dim = {self.heads * self.head_dim} "
                              f"must equal embed_dim = {self.embed_dim}")
        if self.graph_variant not in ("mlp_sigmoid", "gatv2"):
            raise ConfigError(f"unknown graph variant {self.graph_variant!r}")
        if self.target_mode not in ("delta", "raw"):
            raise ConfigError(f"unknown target mode {self.target_mode!r}")
        self.graph_hidden = tuple(int(h) for h in self.graph_hidden)

    @property
    def pair_dim(self):
        """Feature width of one directed pair embedding."""
        return self.embed_dim if self.use_pa else 2 * self.hidden_dim

    @property
    def graph_input_dim(self):
        """The graph extractor consumes the ordered pair (i->j, j->i) when PA
        is on; without PA the concatenated final hidden states already carry
        both directions."""
        return 2 * self.embed_dim if self.use_pa else 2 * self.hidden_dim

    def to_text(self):
        cp = configparser.ConfigParser()
        cp["schema"] = {"version": str(CONFIG_SCHEMA_VERSION), "kind": "model"}
        cp["model"] = {
            "state_dim": str(self.state_dim),
            "n_agents": str(self.n_agents),
            "hidden_dim": str(self.hidden_dim),
            "embed_dim": str(self.embed_dim),
            "heads": str(self.heads),
            "head_dim": str(self.head_dim),
            "embed_hidden": str(self.embed_hidden),
            "graph_hidden": ",".join(str(h) for h in self.graph_hidden),
            "decoder_value_dim": str(self.decoder_value_dim),
            "decoder_hidden": str(self.decoder_hidden),
            "use_pa": str(self.use_pa).lower(),
            "graph_variant": self.graph_variant,
            "t_enc": str(self.t_enc),
            "t_dec": str(self.t_dec),
            "target_mode": self.target_mode,
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if cp.get("schema", "kind", fallback="model") != "model":
            raise ConfigError("not a model config descriptor")
        version = cp.getint("schema", "version", fallback=-1)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported model config schema version {version}")
        m = cp["model"]
        return cls(
            state_dim=m.getint("state_dim"),
            n_agents=m.getint("n_agents"),
            hidden_dim=m.getint("hidden_dim"),
            embed_dim=m.getint("embed_dim"),
            heads=m.getint("heads"),
            head_dim=m.getint("head_dim"),
            embed_hidden=m.getint("embed_hidden"),
            graph_hidden=tuple(int(h) for h in m.get("graph_hidden").split(",")),
            decoder_value_dim=m.getint("decoder_value_dim"),
            decoder_hidden=m.getint("decoder_hidden"),
            use_pa=m.getboolean("use_pa"),
            graph_variant=m.get("graph_variant"),
            t_enc=m.getint("t_enc"),
            t_dec=m.getint("t_dec"),
            target_mode=m.get("target_mode"),
        )

    def config_hash(self):
        return hashlib.sha256(self.to_text().encode("ascii")).hexdigest()


class ScoreEvalCounter:
    """Counts attention score evaluations (one per key/query dot product)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


pa_score_counter = ScoreEvalCounter()


def init_params(cfg, rng, dtype=np.float32):
    """Build the full learnable parameter dict, uniform(+-1/sqrt(fan_in))."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(np.random.SeedSequence((int(rng), 0)))
    params = {}
    nn.mlp_params(params, "encoder.embed", rng,
                  (cfg.state_dim, cfg.embed_hidden, cfg.embed_dim), dtype)
    nn.affine_params(params, "encoder.init", rng, cfg.state_dim, cfg.hidden_dim, dtype)
    nn.gru_params(params, "encoder.gru", rng, cfg.embed_dim, cfg.hidden_dim, dtype)
    for name in ("key", "query", "value"):
        nn.affine_params(params, f"pa.{name}", rng, cfg.hidden_dim, cfg.embed_dim, dtype)
    graph_dims = (cfg.graph_input_dim,) + cfg.graph_hidden + (1,)
    nn.mlp_params(params, "graph.mlp", rng, graph_dims, dtype)
    nn.affine_params(params, "graph.gatv2.w", rng, cfg.graph_input_dim,
                     cfg.graph_hidden[0], dtype, bias=False)
    nn.affine_params(params, "graph.gatv2.a", rng, cfg.graph_hidden[0], 1, dtype, bias=False)
    nn.affine_params(params, "decoder.value", rng, cfg.hidden_dim, cfg.decoder_value_dim, dtype)
    nn.mlp_params(params, "decoder.primary", rng,
                  (2 * cfg.decoder_value_dim, cfg.decoder_hidden, cfg.decoder_hidden), dtype)
    nn.mlp_params(params, "decoder.mu", rng,
                  (cfg.decoder_hidden, cfg.decoder_hidden, cfg.state_dim), dtype)
    nn.mlp_params(params, "decoder.sigma", rng,
                  (cfg.decoder_hidden, cfg.decoder_hidden, cfg.state_dim), dtype)
    return params


def _embed_states(params, x):
    """Per-state 2-layer Mish MLP shared by encoder and decoder inputs."""
    return nn.apply_mlp(params, "encoder.embed", x, 2, last_activation=ad.mish)


def encode_trajectory(params, cfg, window):
    """Run the shared GRU over an encode window.

    window: (B, T_enc, N, S) array or Value. Returns hidden states as a
    Value of shape (B, T_enc, N, hidden_dim). The initial hidden state is an
    affine map of the window's first step.
    """
    win = ad.as_value(window)
    b, t, n, s = win.data.shape
    if t != cfg.t_enc:
        raise ConfigError(f"encode window length {t} != t_enc={cfg.t_enc}")
    if s != cfg.state_dim:
        raise ConfigError(f"state dim {s} != config state_dim={cfg.state_dim}")
    cell = nn.gru_view(params, "encoder.gru")
    xe = _embed_states(params, win)                      # (B,T,N,E)
    gates = ad.affine(xe, cell.w_ih, cell.b_ih)          # (B,T,N,3H), one matmul
    h = ad.reshape(nn.apply_affine(params, "encoder.init", ad.index_axis(win, 0, axis=1)),
                   (b * n, cfg.hidden_dim))
    steps = []
    for step in range(t):
        gi = ad.reshape(ad.index_axis(gates, step, axis=1), (b * n, 3 * cfg.hidden_dim))
        h = nn.gru_cell_pregate(cell, h, gi)
        steps.append(h)
    stacked = ad.stack(steps, axis=0)                    # (T, B*N, H)
    return ad.transpose(ad.reshape(stacked, (t, b, n, cfg.hidden_dim)), (1, 0, 2, 3))


def pairwise_attention(params, cfg, hidden):
    """Same-time multi-head attention over the encode window.

    For each directed pair (i -> j) and head, the score at time t is
    key_i(t) . query_j(t) / sqrt(head_dim); weights are normalized over the
    time axis only, and mix value_j(t) into one embedding per pair.
    Returns a Value of shape (B, N, N, embed_dim).
    """
    b, t, n, _ = hidden.data.shape
    m, dh = cfg.heads, cfg.head_dim

    def heads_of(name):
        proj = nn.apply_affine(params, f"pa.{name}", hidden)     # (B,T,N,embed)
        return ad.reshape(proj, (b, t, n, m, dh))

    k, q, v = heads_of("key"), heads_of("query"), heads_of("value")
    scores = ad.einsum2("btimd,btjmd->btijm", k, q) * (1.0 / np.sqrt(dh))
    pa_score_counter.count += scores.data.size
    weights = ad.masked_softmax(scores, axis=1)                  # over time
    mixed = ad.einsum2("btijm,btjmd->bijmd", weights, v)
    return ad.reshape(mixed, (b, n, n, m * dh))


def pair_embed_no_pa(params, cfg, hidden):
    """Projection-free pair representation: final hidden states concatenated
    (h_i, h_j). Returns (B, N, N, 2*hidden_dim)."""
    b, t, n, h = hidden.data.shape
    h_last = ad.index_axis(hidden, t - 1, axis=1)                # (B,N,H)
    h_i = ad.broadcast_axis(h_last, 2, n)                        # i indexed on axis 1
    h_j = ad.broadcast_axis(h_last, 1, n)                        # j indexed on axis 2
    return ad.concat([h_i, h_j], axis=-1)


def _pair_input(cfg, pair):
    """Ordered-pair input for the graph extractor: with PA the directed
    embeddings (e_ij, e_ji) are concatenated; without PA the pair embedding
    already contains both agents' hidden states and is used as-is."""
    if cfg.use_pa:
        return ad.concat([pair, ad.transpose(pair, (0, 2, 1, 3))], axis=-1)
    return pair


def _diag_mask(n, dtype):
    return (DIAG_MASK_VALUE * np.eye(n)).astype(dtype)


def extract_graph(params, cfg, pair):
    """Score every directed pair with the 3-layer Mish MLP, force the diagonal
    off with a large negative mask, and squash to (0, 1) with a sigmoid."""
    b, n = pair.data.shape[0], pair.data.shape[1]
    x = _pair_input(cfg, pair)
    n_layers = len(cfg.graph_hidden) + 1
    score = nn.apply_mlp(params, "graph.mlp", x, n_layers)       # (B,N,N,1)
    score = ad.reshape(score, (b, n, n))
    score = score + _diag_mask(n, pair.data.dtype)
    return ad.sigmoid(score)


def extract_graph_gatv2(params, cfg, pair, leaky_slope=0.2):
    """Single-head GATv2-style scoring: a . LeakyReLU(W [pair]) with the same
    diagonal mask and sigmoid so outputs stay comparable absolute strengths."""
    b, n = pair.data.shape[0], pair.data.shape[1]
    x = _pair_input(cfg, pair)
    hidden = ad.leaky_relu(nn.apply_affine(params, "graph.gatv2.w", x), leaky_slope)
    score = ad.reshape(nn.apply_affine(params, "graph.gatv2.a", hidden), (b, n, n))
    score = score + _diag_mask(n, pair.data.dtype)
    return ad.sigmoid(score)


def infer_graph(params, cfg, window):
    """Full encoder -> pair embedding -> graph estimate pass."""
    hidden = encode_trajectory(params, cfg, window)
    if cfg.use_pa:
        pair = pairwise_attention(params, cfg, hidden)
    else:
        pair = pair_embed_no_pa(params, cfg, hidden)
    if cfg.graph_variant == "gatv2":
        alpha = extract_graph_gatv2(params, cfg, pair)
    else:
        alpha = extract_graph(params, cfg, pair)
    return hidden, alpha


def aggregate_messages(alpha_masked, values):
    """Unnormalized weighted sum of the other agents' value vectors:
    message_i = sum_{j != i} alpha_ij v_j (the diagonal is already zeroed in
    alpha_masked). Linear in alpha: doubling a row doubles its message."""
    return ad.matmul(alpha_masked, values)


def decode_step(params, cfg, h_prev, x_t, alpha_masked):
    """One decoder step: consume the current state, aggregate other agents'
    value vectors weighted by the graph estimate, and emit Gaussian stats.

    h_prev: (B*N, H) Value; x_t: (B, N, S) Value; alpha_masked: (B, N, N)
    Value with a zeroed diagonal. Returns (h_next, mu, sigma_sq).
    """
    b, n, s = x_t.data.shape
    cell = nn.gru_view(params, "encoder.gru")
    xe = ad.reshape(_embed_states(params, x_t), (b * n, cfg.embed_dim))
    h_next = nn.gru_cell(cell, h_prev, xe)
    h_agents = ad.reshape(h_next, (b, n, cfg.hidden_dim))
    values = nn.apply_affine(params, "decoder.value", h_agents)  # (B,N,V)
    message = aggregate_messages(alpha_masked, values)
    combined = ad.concat([message, values], axis=-1)
    encoded = nn.apply_mlp(params, "decoder.primary", combined, 2, last_activation=ad.mish)
    mu = nn.apply_mlp(params, "decoder.mu", encoded, 2)
    sigma_raw = nn.apply_mlp(params, "decoder.sigma", encoded, 2)
    sigma_sq = ad.softplus(sigma_raw) + 1e-6
    return h_next, mu, sigma_sq


def rollout(params, cfg, h_start, x_last, alpha, t_dec=None, mode="closed_loop",
            noise=None, teacher_states=None):
    """Iterate the decoder.

    closed_loop: each next input is previous input + predicted delta (or the
    raw prediction in raw target mode), sampled via mu + sqrt(sigma_sq)*noise
    when `noise` (T_dec, B, N, S) is given, else the mean path.
    teacher_forced: inputs come from `teacher_states` (B, T_dec, N, S).

    Returns (mu, sigma_sq, states) Values, each (B, T_dec, N, S).
    """
    t_dec = cfg.t_dec if t_dec is None else t_dec
    if mode not in ("closed_loop", "teacher_forced"):
        raise ConfigError(f"unknown rollout mode {mode!r}")
    if mode == "teacher_forced" and teacher_states is None:
        raise ConfigError("teacher_forced rollout needs teacher_states")
    b, n, _ = x_last.data.shape if isinstance(x_last, Value) else np.shape(x_last)
    eye = np.eye(n, dtype=alpha.data.dtype)
    alpha_masked = alpha * (1.0 - eye)

    h = h_start
    x_cur = ad.as_value(x_last)
    mus, sqs, xs = [], [], []
    for step in range(t_dec):
        h, mu, sq = decode_step(params, cfg, h, x_cur, alpha_masked)
        if noise is not None:
            sample = mu + ad.sqrt(sq) * noise[step]
        else:
            sample = mu
        if cfg.target_mode == "delta":
            x_next = x_cur + sample
        else:
            x_next = sample
        mus.append(mu)
        sqs.append(sq)
        xs.append(x_next)
        if mode == "teacher_forced":
            x_cur = ad.as_value(np.asarray(teacher_states[:, step], dtype=mu.data.dtype))
        else:
            x_cur = x_next
    return (ad.stack(mus, axis=1), ad.stack(sqs, axis=1), ad.stack(xs, axis=1))


def forward(params, cfg, window, noise=None, mode="closed_loop", teacher_states=None,
            alpha_override=None):
    """Encode a window, infer the graph, and roll the decoder out.

    window: (B, T_enc, N, S). `alpha_override` substitutes a fixed (possibly
    ground-truth) graph for the inferred one in the rollout while the inferred
    alpha is still returned for scoring.

    Returns (alpha, mu, sigma_sq, states).
    """
    hidden, alpha = infer_graph(params, cfg, window)
    b, t, n, _ = hidden.data.shape
    h_start = ad.reshape(ad.index_axis(hidden, t - 1, axis=1), (b * n, cfg.hidden_dim))
    x_last = np.asarray(window[:, -1] if not isinstance(window, Value)
                        else window.data[:, -1], dtype=hidden.data.dtype)
    alpha_used = alpha if alpha_override is None else ad.as_value(
        np.asarray(alpha_override, dtype=alpha.data.dtype))
    mu, sq, states = rollout(params, cfg, h_start, ad.as_value(x_last), alpha_used,
                             mode=mode, noise=noise, teacher_states=teacher_states)
    return alpha, mu, sq, states
