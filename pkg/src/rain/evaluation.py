"""Evaluation metrics: off-diagonal Pearson correlations (pooled and
per-sample), permutation scoring for discrete-edge baselines, horizon MSE,
and full-model validation sweeps."""

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, UndefinedCorrelationError
from .model import forward

HISTOGRAM_BINS = 40


def _pearson_flat(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size < 2:
        raise UndefinedCorrelationError("need at least 2 points")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise UndefinedCorrelationError("zero variance operand")
    return float(np.corrcoef(x, y)[0, 1])


def pearson_offdiag(a, k):
    """Pearson correlation over the N(N-1) off-diagonal entries."""
    a = np.asarray(a, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if a.shape != k.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected two equal square matrices, got {a.shape} and {k.shape}")
    mask = ~np.eye(a.shape[0], dtype=bool)
    return _pearson_flat(a[mask], k[mask])


@dataclass
class CorrelationReport:
    rho_tot: float
    rho_sample_mean: float
    rho_sample_hist: tuple      # (bin_edges, counts)
    n_pairs_used: int
    n_undefined_samples: int
    n_samples: int
    n_skipped_pairs: int = 0


def correlation_report(alphas, truths):
    """Pooled and per-sample off-diagonal correlations between inferred and
    true weights. NaN entries in `alphas` (e.g. skipped baseline pairs) are
    excluded and counted; samples with undefined correlation are excluded
    from the per-sample mean and counted.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if alphas.shape != truths.shape or alphas.ndim != 3:
        raise ValueError(f"aligned (samples, N, N) stacks required, "
                         f"got {alphas.shape} and {truths.shape}")
    if alphas.shape[0] == 0:
        raise ValueError("empty input")
    n = alphas.shape[1]
    offdiag = ~np.eye(n, dtype=bool)
    valid = offdiag[None, :, :] & np.isfinite(alphas)
    n_skipped = int(offdiag.sum() * alphas.shape[0] - valid.sum())

    pooled_a = alphas[valid]
    pooled_k = truths[valid]
    try:
        rho_tot = _pearson_flat(pooled_a, pooled_k)
    except UndefinedCorrelationError:
        rho_tot = float("nan")

    per_sample = []
    undefined = 0
    for s in range(alphas.shape[0]):
        sel = valid[s]
        try:
            per_sample.append(_pearson_flat(alphas[s][sel], truths[s][sel]))
        except UndefinedCorrelationError:
            undefined += 1
    per_sample = np.asarray(per_sample)
    counts, edges = np.histogram(per_sample, bins=HISTOGRAM_BINS, range=(-1.0, 1.0))
    mean = float(per_sample.mean()) if per_sample.size else float("nan")
    return CorrelationReport(rho_tot=rho_tot, rho_sample_mean=mean,
                             rho_sample_hist=(edges, counts),
                             n_pairs_used=int(valid.sum()),
                             n_undefined_samples=undefined,
                             n_samples=alphas.shape[0],
                             n_skipped_pairs=n_skipped)


MAX_PERMUTATION_CATEGORIES = 8


def permutation_score(edge_labels, truth, n_categories):
    """Assign the evenly spaced weights 0, 1/(n-1), ..., 1 to the n discrete
    edge categories over all n! permutations; return (best off-diagonal
    Pearson, winning category -> weight assignment).
    """
    if n_categories > MAX_PERMUTATION_CATEGORIES:
        raise ConfigError(f"{n_categories}! assignments is infeasible; "
                          f"limit is {MAX_PERMUTATION_CATEGORIES}")
    if n_categories < 2:
        raise ConfigError("need at least 2 categories")
    labels = np.asarray(edge_labels)
    if labels.min() < 0 or labels.max() >= n_categories:
        raise ValueError("labels outside category range")
    levels = np.linspace(0.0, 1.0, n_categories)
    best = None
    best_assignment = None
    undefined_everywhere = True
    for perm in itertools.permutations(range(n_categories)):
        weights = levels[list(perm)]
        matrix = weights[labels]
        try:
            corr = pearson_offdiag(matrix, truth)
        except UndefinedCorrelationError:
            continue
        undefined_everywhere = False
        if best is None or corr > best:
            best = corr
            best_assignment = tuple(weights)
    if undefined_everywhere:
        raise UndefinedCorrelationError("all permutations give zero-variance matrices")
    return best, best_assignment


def horizon_mse(pred_paths, true_paths, horizons=(10, 30, 50)):
    """MSE over the first h predicted steps for each horizon h, averaged over
    samples, steps, agents, and state variables."""
    pred = np.asarray(pred_paths, dtype=np.float64)
    true = np.asarray(true_paths, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {true.shape}")
    if pred.shape[1] < max(horizons):
        raise ValueError(f"only {pred.shape[1]} steps available for horizons {horizons}")
    sq = (pred - true) ** 2
    return {h: float(sq[:, :h].mean()) for h in horizons}


def evaluate_model(params, cfg, data, graphs=None, batch_size=128, alpha_source="inferred"):
    """Forward the model over a dataset with noise-free closed-loop rollouts.

    data: (samples, T, N, S) with T >= t_enc + t_dec. graphs: (samples, N, N)
    ground truth or None. alpha_source: "inferred" or "true" (replaces the
    inferred graph by the ground truth in the rollout, Table-2 style).

    Returns a dict with val_nll, mse{10,30,50}, alphas, predicted paths, and
    the correlation report when graphs are given.
    """
    if alpha_source not in ("inferred", "true"):
        raise ConfigError(f"unknown alpha source {alpha_source!r}")
    if alpha_source == "true" and graphs is None:
        raise ConfigError("alpha_source='true' needs ground-truth graphs")
    n_samples, t_total, n, s = data.shape
    need = cfg.t_enc + cfg.t_dec
    if t_total < need:
        raise ConfigError(f"dataset windows have {t_total} steps, need {need}")
    horizons = tuple(sorted({min(h, cfg.t_dec) for h in (10, 30, 50)}))
    dtype = next(iter(params.values())).data.dtype

    alphas = np.empty((n_samples, n, n), dtype=np.float64)
    paths = np.empty((n_samples, cfg.t_dec, n, s), dtype=np.float64)
    nll_total = 0.0
    for lo in range(0, n_samples, batch_size):
        hi = min(lo + batch_size, n_samples)
        window = np.asarray(data[lo:hi, :need], dtype=dtype)
        enc = window[:, :cfg.t_enc]
        override = graphs[lo:hi] if alpha_source == "true" else None
        alpha, mu, sq, states = forward(params, cfg, enc, alpha_override=override)
        if cfg.target_mode == "delta":
            targets = np.diff(window[:, cfg.t_enc - 1:], axis=1)
        else:
            targets = window[:, cfg.t_enc:]
        nll = ad.gaussian_nll(targets.astype(dtype), mu, sq, step_axis=1)
        nll_total += float(nll.data) * (hi - lo)
        alphas[lo:hi] = alpha.data
        paths[lo:hi] = states.data
    true_future = data[:, cfg.t_enc:need].astype(np.float64)
    result = {
        "val_nll": nll_total / n_samples,
        "mse": horizon_mse(paths, true_future, horizons=horizons),
        "alphas": alphas,
        "paths": paths,
    }
    if graphs is not None:
        result["correlation"] = correlation_report(alphas, np.asarray(graphs))
    return result
