"""Training orchestration: seeded batching, NLL over sampled closed-loop
rollouts, per-epoch validation metrics, and best-checkpoint retention.

Determinism contract: with a fixed seed, fp64 precision, and one BLAS thread,
two runs produce identical metric trajectories and identical checkpoints;
wall-clock readings are reporting metadata and excluded from that contract.
"""

import csv
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .datasets import read_graphs, read_trajectories
from .errors import ConfigError, NumericDivergenceError
from .evaluation import evaluate_model
from .model import ModelConfig, forward, init_params
from .optim import AdamState, adam_step, clip_global_norm

# seed-stream tags so independent RNG uses can never collide
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_NOISE = 2

PRECISION_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class TrainConfig:
    model: ModelConfig
    train_data: str
    val_data: str
    train_graphs: str = ""
    val_graphs: str = ""
    out_dir: str = "."
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 5e-4
    clip_norm: float = 5.0
    seed: int = 0
    precision: str = "f32"
    sample_rollout: bool = True
    resume_from: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.precision not in PRECISION_DTYPES:
            raise ConfigError(f"precision must be one of {sorted(PRECISION_DTYPES)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    val_nll: float
    mse_10: float
    mse_30: float
    mse_50: float
    rho_tot: float
    rho_sample: float
    wall_clock_s: float

    NUMERIC_FIELDS = ("train_nll", "val_nll", "mse_10", "mse_30", "mse_50",
                      "rho_tot", "rho_sample")


def _locate_bad(arr):
    bad = ~np.isfinite(arr)
    step, agent, channel = None, None, None
    if bad.any():
        idx = np.argwhere(bad)[0]
        if arr.ndim == 4:      # (B, T, N, S)
            step, agent, channel = int(idx[1]), int(idx[2]), int(idx[3])
        elif arr.ndim == 3:    # (T, N, S)
            step, agent, channel = int(idx[0]), int(idx[1]), int(idx[2])
    return step, agent, channel


def compute_batch_loss(params, cfg, window, noise=None):
    """Encoder -> graph -> sampled closed-loop rollout -> Gaussian NLL against
    state differences (or raw states in raw target mode).

    window: (B, t_enc + t_dec, N, S) in the parameter dtype. Raises
    NumericDivergenceError with (step, agent, channel) diagnostics when the
    forward pass produces non-finite statistics.
    """
    enc = window[:, :cfg.t_enc]
    alpha, mu, sq, _states = forward(params, cfg, enc, noise=noise)
    for label, node in (("mu", mu), ("sigma_sq", sq)):
        if not np.isfinite(node.data).all():
            step, agent, channel = _locate_bad(node.data)
            raise NumericDivergenceError(
                f"non-finite {label} at decoder step {step}, agent {agent}, channel {channel}",
                step=step, agent=agent, channel=channel)
    if cfg.target_mode == "delta":
        targets = np.diff(window[:, cfg.t_enc - 1:], axis=1)
    else:
        targets = window[:, cfg.t_enc:]
    loss = ad.gaussian_nll(targets, mu, sq, step_axis=1)
    if not np.isfinite(loss.data):
        raise NumericDivergenceError("non-finite batch loss")
    return loss


def _load_split(data_path, graphs_path, cfg):
    batch = read_trajectories(data_path)
    if batch.n_agents != cfg.n_agents:
        raise ConfigError(f"{data_path}: dataset has N={batch.n_agents}, "
                          f"model expects {cfg.n_agents}")
    if batch.state_dim != cfg.state_dim:
        raise ConfigError(f"{data_path}: dataset has S={batch.state_dim}, "
                          f"model expects {cfg.state_dim}")
    if batch.n_steps < cfg.t_enc + cfg.t_dec:
        raise ConfigError(f"{data_path}: {batch.n_steps} steps < "
                          f"t_enc + t_dec = {cfg.t_enc + cfg.t_dec}")
    graphs = None
    if graphs_path:
        graphs = read_graphs(graphs_path)
        if graphs.shape[0] != batch.n_samples or graphs.shape[1] != batch.n_agents:
            raise ConfigError(f"{graphs_path}: graph stack {graphs.shape} does not "
                              f"match dataset ({batch.n_samples} samples, N={batch.n_agents})")
    return batch, graphs


def train_run(tc):
    """Run the full optimization loop.

    Returns (params, stats_rows, checkpoint_path). The checkpoint with the
    best validation NLL is kept (the initialization when epochs == 0).
    """
    cfg = tc.model
    dtype = PRECISION_DTYPES[tc.precision]
    train_batch, _train_graphs = _load_split(tc.train_data, tc.train_graphs, cfg)
    val_batch, val_graphs = _load_split(tc.val_data, tc.val_graphs, cfg)

    if tc.resume_from:
        from .checkpoint import load_checkpoint, params_from_arrays
        arrays, _cfg_text, _steps = load_checkpoint(tc.resume_from, cfg.to_text())
        params = params_from_arrays({k: v.astype(dtype) for k, v in arrays.items()})
    else:
        params = init_params(cfg, np.random.default_rng(
            np.random.SeedSequence((tc.seed, STREAM_INIT))), dtype=dtype)
    adam = AdamState(learning_rate=tc.learning_rate)

    os.makedirs(tc.out_dir, exist_ok=True)
    ckpt_path = os.path.join(tc.out_dir, "checkpoint.ckpt")
    need = cfg.t_enc + cfg.t_dec
    data = train_batch.data[:, :need]
    n_train = data.shape[0]
    best_val = None
    stats_rows = []

    save_checkpoint(ckpt_path, params, cfg.to_text(), adam.step_count)
    for epoch in range(tc.epochs):
        t_start = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence((tc.seed, STREAM_SHUFFLE, epoch))).permutation(n_train)
        loss_sum = 0.0
        n_seen = 0
        consecutive_bad = 0
        for batch_idx, lo in enumerate(range(0, n_train, tc.batch_size)):
            sel = order[lo:lo + tc.batch_size]
            window = np.ascontiguousarray(data[sel], dtype=dtype)
            noise = None
            if tc.sample_rollout:
                noise_rng = np.random.default_rng(
                    np.random.SeedSequence((tc.seed, STREAM_NOISE, epoch, batch_idx)))
                noise = noise_rng.standard_normal(
                    (cfg.t_dec,) + window.shape[:1] + window.shape[2:], dtype=dtype)
            try:
                loss = compute_batch_loss(params, cfg, window, noise=noise)
            except NumericDivergenceError:
                consecutive_bad += 1
                ad.zero_grads(params.values())
                if consecutive_bad >= 3:
                    raise
                continue
            consecutive_bad = 0
            ad.backward(loss)
            if tc.clip_norm > 0:
                clip_global_norm(params, tc.clip_norm)
            adam_step(params, adam)
            ad.zero_grads(params.values())
            loss_sum += float(loss.data) * len(sel)
            n_seen += len(sel)

        metrics = evaluate_model(params, cfg, val_batch.data, val_graphs,
                                 batch_size=tc.batch_size)
        corr = metrics.get("correlation")
        mse = metrics["mse"]
        row = EpochStats(
            epoch=epoch,
            train_nll=loss_sum / max(n_seen, 1),
            val_nll=metrics["val_nll"],
            mse_10=mse[min(10, cfg.t_dec)],
            mse_30=mse[min(30, cfg.t_dec)],
            mse_50=mse[min(50, cfg.t_dec)],
            rho_tot=corr.rho_tot if corr else float("nan"),
            rho_sample=corr.rho_sample_mean if corr else float("nan"),
            wall_clock_s=time.perf_counter() - t_start,
        )
        stats_rows.append(row)
        if best_val is None or row.val_nll < best_val:
            best_val = row.val_nll
            save_checkpoint(ckpt_path, params, cfg.to_text(), adam.step_count)
    return params, stats_rows, ckpt_path


def write_report_csv(path, stats_rows, config_hash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + list(EpochStats.NUMERIC_FIELDS) + ["wall_clock_s"])
        for row in stats_rows:
            d = asdict(row)
            writer.writerow([d["epoch"]] + [repr(d[k]) for k in EpochStats.NUMERIC_FIELDS]
                            + [f"{d['wall_clock_s']:.3f}"])


def read_report_csv(path):
    """Returns (config_hash, rows as dicts with floats)."""
    with open(path) as fh:
        first = fh.readline().strip()
        config_hash = first.split("=", 1)[1] if first.startswith("# config_hash=") else ""
        reader = csv.DictReader(fh)
        rows = [{k: float(v) for k, v in r.items()} for r in reader]
    return config_hash, rows


def report_summary(stats_rows, config_hash):
    lines = [f"config_hash: {config_hash}", f"epochs: {len(stats_rows)}"]
    if stats_rows:
        best = min(stats_rows, key=lambda r: r.val_nll)
        last = stats_rows[-1]
        lines += [
            f"best_val_nll: {best.val_nll!r} (epoch {best.epoch})",
            f"final_val_nll: {last.val_nll!r}",
            f"final_rho_tot: {last.rho_tot!r}",
            f"final_rho_sample: {last.rho_sample!r}",
            f"final_mse_10_30_50: {last.mse_10!r} {last.mse_30!r} {last.mse_50!r}",
            f"total_wall_clock_s: {sum(r.wall_clock_s for r in stats_rows):.1f}",
        ]
    return "\n".join(lines) + "\n"
