"""Experiment driver: dataset generation, training, evaluation, inference,
and report emission from declarative configs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence. Every command is deterministic given (config, seed) in
single-threaded mode, and every report embeds the config hash.
"""

import argparse
import configparser
import csv
import hashlib
import io
import os
import sys

import numpy as np

from . import svg
from .checkpoint import load_checkpoint, params_from_arrays, save_checkpoint
from .datasets import (MultilayerSpec, TASK_LAYOUTS, generate_dataset,
                       load_trajectory_csv, read_graphs, read_trajectories,
                       sample_to_csv, write_trajectories, TrajectoryBatch)
from .errors import ConfigError, DataError, NumericDivergenceError
from .evaluation import evaluate_model
from .model import ModelConfig
from .simulate import kuramoto_config, spring_config
from .training import (EpochStats, TrainConfig, read_report_csv, report_summary,
                       train_run, write_report_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

EXPERIMENT_SCHEMA_VERSION = 1


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--threads", type=int, default=0,
                        help="limit BLAS threads (0 = library default; 1 for the determinism contract)")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f32")
    parser.add_argument("--out", default=".", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="rain",
                                     description="interaction-strength inference experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset and its ground-truth graphs")
    _add_common(g)
    g.add_argument("--task", choices=sorted(TASK_LAYOUTS), required=True)
    g.add_argument("--n-agents", type=int, default=5)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--p", type=float, default=0.5, help="edge probability")
    g.add_argument("--name", default="", help="output file stem (default: task name)")
    g.add_argument("--multilayer", action="store_true",
                   help="layered topology preset instead of random graphs")
    g.add_argument("--layers", default="5,5", help="multilayer sizes, e.g. 5,5")
    g.add_argument("--intra", default="0.5,1.0", help="intra-layer weight range lo,hi")
    g.add_argument("--links", default="3,8,0.3",
                   help="inter-layer links i,j,w joined by ';'")
    g.add_argument("--dt", type=float, default=0.0, help="override integrator step")
    g.add_argument("--raw-steps", type=int, default=0, help="override raw step count")
    g.add_argument("--stride", type=int, default=0, help="override subsample stride")
    g.add_argument("--box", type=float, default=0.0, help="override box half width")
    g.add_argument("--strength-scale", type=float, default=0.0)
    g.add_argument("--kuramoto-sign", choices=("literal", "standard"), default="literal")
    g.add_argument("--csv-sample", type=int, default=-1,
                   help="also export this sample index as CSV")

    t = sub.add_parser("train", help="optimize a model on a generated dataset")
    _add_common(t)
    t.add_argument("--config", default="", help="experiment config file; flags override")
    t.add_argument("--data", default="", help="training trajectories (RAIN1)")
    t.add_argument("--graphs", default="", help="training ground-truth graphs (optional)")
    t.add_argument("--val-data", default="")
    t.add_argument("--val-graphs", default="")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--clip", type=float, default=5.0, help="global grad-norm clip (0 disables)")
    t.add_argument("--no-pa", action="store_true", help="disable pairwise attention")
    t.add_argument("--graph", choices=("mlp_sigmoid", "gatv2"), default="mlp_sigmoid",
                   dest="graph_variant")
    t.add_argument("--t-enc", type=int, default=50)
    t.add_argument("--t-dec", type=int, default=50)
    t.add_argument("--target-mode", choices=("delta", "raw"), default="delta")
    t.add_argument("--no-sample-rollout", action="store_true",
                   help="train on mean-path rollouts instead of sampled ones")
    t.add_argument("--resume", default="", help="warm-start from a checkpoint")

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--graphs", default="")
    e.add_argument("--true-graph", action="store_true",
                   help="roll out with the ground-truth graph instead of the inferred one")
    e.add_argument("--batch-size", type=int, default=128)
    e.add_argument("--dump-samples", type=int, default=4,
                   help="emit per-sample heatmaps for the first K samples")

    i = sub.add_parser("infer", help="predict future states for an external trajectory")
    _add_common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True, help="CSV (t,agent,var...) or RAIN1 file")
    i.add_argument("--sample-index", type=int, default=0,
                   help="sample to use when the input is a RAIN1 file")

    r = sub.add_parser("report", help="re-emit summaries and figures from run artifacts")
    _add_common(r)
    r.add_argument("--run", default="", help="run directory containing report.csv")
    r.add_argument("--dataset", default="", help="RAIN1 file to export a sample from")
    r.add_argument("--graphs", default="", help="RAIN1 graphs file to render")
    r.add_argument("--sample", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# generate


def _sim_config(args):
    factory = spring_config if args.task == "spring" else kuramoto_config
    overrides = {}
    if args.dt > 0:
        overrides["dt"] = args.dt
    if args.raw_steps > 0:
        overrides["n_steps_raw"] = args.raw_steps
    if args.stride > 0:
        overrides["subsample_stride"] = args.stride
    if args.box > 0:
        overrides["box_half_width"] = args.box
    if args.strength_scale > 0:
        overrides["strength_scale"] = args.strength_scale
    overrides["kuramoto_sign"] = args.kuramoto_sign
    return factory(seed=args.seed, **overrides)


def _parse_multilayer(args):
    try:
        layers = tuple(int(x) for x in args.layers.split(","))
        lo, hi = (float(x) for x in args.intra.split(","))
        links = []
        if args.links.strip():
            for chunk in args.links.split(";"):
                i, j, w = chunk.split(",")
                links.append((int(i), int(j), float(w)))
    except ValueError as exc:
        raise ConfigError(f"bad multilayer spec: {exc}") from None
    return MultilayerSpec(layer_sizes=layers, intra_weight_range=(lo, hi),
                          inter_links=tuple(links))


def cmd_generate(args):
    os.makedirs(args.out, exist_ok=True)
    name = args.name or args.task
    data_path = os.path.join(args.out, f"{name}.rain")
    graphs_path = os.path.join(args.out, f"{name}_graphs.rain")
    multilayer = _parse_multilayer(args) if args.multilayer else None
    batch, _graphs = generate_dataset(
        args.task, args.samples, args.n_agents, args.p, args.seed,
        data_path, graphs_path, sim_config=_sim_config(args), multilayer=multilayer)
    for path in (data_path, graphs_path):
        print(f"{path} sha256={_sha256_file(path)}")
    print(f"dims samples={batch.n_samples} T={batch.n_steps} N={batch.n_agents} "
          f"S={batch.state_dim} layout={','.join(batch.state_layout)}")
    if args.csv_sample >= 0:
        csv_path = os.path.join(args.out, f"{name}_sample{args.csv_sample}.csv")
        sample_to_csv(batch, args.csv_sample, csv_path)
        print(f"{csv_path} (sample {args.csv_sample})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _experiment_text(args, model_cfg):
    cp = configparser.ConfigParser()
    cp["schema"] = {"version": str(EXPERIMENT_SCHEMA_VERSION), "kind": "experiment"}
    cp["dataset"] = {
        "train_data": args.data,
        "train_graphs": args.graphs,
        "val_data": args.val_data,
        "val_graphs": args.val_graphs,
    }
    cp["train"] = {
        "epochs": str(args.epochs),
        "batch_size": str(args.batch_size),
        "learning_rate": repr(args.lr),
        "clip_norm": repr(args.clip),
        "seed": str(args.seed),
        "precision": args.precision,
        "sample_rollout": str(not args.no_sample_rollout).lower(),
    }
    model_doc = configparser.ConfigParser()
    model_doc.read_string(model_cfg.to_text())
    cp["model"] = dict(model_doc["model"])
    cp["output"] = {"out_dir": args.out}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _apply_config_file(args):
    """Fill train-command defaults from an experiment config file."""
    cp = configparser.ConfigParser()
    if not cp.read(args.config):
        raise ConfigError(f"cannot read config file {args.config}")
    ds = cp["dataset"] if "dataset" in cp else {}
    tr = cp["train"] if "train" in cp else {}
    args.data = args.data or ds.get("train_data", "")
    args.graphs = args.graphs or ds.get("train_graphs", "")
    args.val_data = args.val_data or ds.get("val_data", "")
    args.val_graphs = args.val_graphs or ds.get("val_graphs", "")
    if "epochs" in tr:
        args.epochs = int(tr["epochs"])
    if "batch_size" in tr:
        args.batch_size = int(tr["batch_size"])
    if "learning_rate" in tr:
        args.lr = float(tr["learning_rate"])
    if "clip_norm" in tr:
        args.clip = float(tr["clip_norm"])
    if "seed" in tr:
        args.seed = int(tr["seed"])
    if "precision" in tr:
        args.precision = tr["precision"]
    if "model" in cp:
        m = cp["model"]
        args.no_pa = not m.getboolean("use_pa", fallback=not args.no_pa)
        args.graph_variant = m.get("graph_variant", args.graph_variant)
        args.t_enc = m.getint("t_enc", fallback=args.t_enc)
        args.t_dec = m.getint("t_dec", fallback=args.t_dec)
        args.target_mode = m.get("target_mode", args.target_mode)


def cmd_train(args):
    if args.config:
        _apply_config_file(args)
    if not args.data or not args.val_data:
        raise ConfigError("train needs --data and --val-data (or a config file providing them)")
    for path in (args.data, args.val_data, args.graphs, args.val_graphs, args.resume):
        if path and not os.path.exists(path):
            raise ConfigError(f"missing input file {path}")
    header = read_trajectories(args.data)
    model_cfg = ModelConfig(
        state_dim=header.state_dim,
        n_agents=header.n_agents,
        use_pa=not args.no_pa,
        graph_variant=args.graph_variant,
        t_enc=args.t_enc,
        t_dec=args.t_dec,
        target_mode=args.target_mode,
    )
    tc = TrainConfig(
        model=model_cfg,
        train_data=args.data,
        val_data=args.val_data,
        train_graphs=args.graphs,
        val_graphs=args.val_graphs,
        out_dir=args.out,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        clip_norm=args.clip,
        seed=args.seed,
        precision=args.precision,
        sample_rollout=not args.no_sample_rollout,
        resume_from=args.resume,
    )
    os.makedirs(args.out, exist_ok=True)
    exp_text = _experiment_text(args, model_cfg)
    exp_hash = hashlib.sha256(exp_text.encode("ascii")).hexdigest()
    with open(os.path.join(args.out, "config.cfg"), "w") as fh:
        fh.write(exp_text)
    with open(os.path.join(args.out, "model.cfg"), "w") as fh:
        fh.write(model_cfg.to_text())

    _params, rows, ckpt_path = train_run(tc)
    write_report_csv(os.path.join(args.out, "report.csv"), rows, exp_hash)
    summary = report_summary(rows, exp_hash)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    for row in rows:
        print(f"epoch {row.epoch}: train_nll={row.train_nll:.4f} val_nll={row.val_nll:.4f} "
              f"mse50={row.mse_50:.4f} rho_tot={row.rho_tot:.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(summary, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_model(path, precision):
    arrays, cfg_text, step_count = load_checkpoint(path)
    cfg = ModelConfig.from_text(cfg_text)
    dtype = np.float32 if precision == "f32" else np.float64
    params = params_from_arrays({k: v.astype(dtype) for k, v in arrays.items()})
    return params, cfg, step_count


def _write_metrics_csv(path, config_hash, result, extra=()):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric", "horizon", "value"])
        writer.writerow(["val_nll", "", repr(result["val_nll"])])
        for h in sorted(result["mse"]):
            writer.writerow(["mse", h, repr(result["mse"][h])])
        corr = result.get("correlation")
        if corr is not None:
            writer.writerow(["rho_tot", "", repr(corr.rho_tot)])
            writer.writerow(["rho_sample", "", repr(corr.rho_sample_mean)])
            writer.writerow(["pairs_used", "", corr.n_pairs_used])
            writer.writerow(["undefined_samples", "", corr.n_undefined_samples])
        for key, value in extra:
            writer.writerow([key, "", value])


def _write_alphas_csv(path, alphas):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "i", "j", "alpha"])
        n_samples, n, _ = alphas.shape
        for s in range(n_samples):
            for i in range(n):
                for j in range(n):
                    writer.writerow([s, i, j, repr(float(alphas[s, i, j]))])


def _write_hist_csv(path, hist):
    edges, counts = hist
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def cmd_eval(args):
    params, cfg, _steps = _load_model(args.checkpoint, args.precision)
    batch = read_trajectories(args.data)
    graphs = read_graphs(args.graphs) if args.graphs else None
    if args.true_graph and graphs is None:
        raise ConfigError("--true-graph needs --graphs")
    if batch.n_agents != cfg.n_agents or batch.state_dim != cfg.state_dim:
        raise ConfigError(f"checkpoint expects N={cfg.n_agents} S={cfg.state_dim}, dataset "
                          f"has N={batch.n_agents} S={batch.state_dim}")
    os.makedirs(args.out, exist_ok=True)
    result = evaluate_model(params, cfg, batch.data, graphs,
                            batch_size=args.batch_size,
                            alpha_source="true" if args.true_graph else "inferred")
    cfg_hash = cfg.config_hash()
    _write_metrics_csv(os.path.join(args.out, "metrics.csv"), cfg_hash, result,
                       extra=[("alpha_source", "true" if args.true_graph else "inferred")])
    _write_alphas_csv(os.path.join(args.out, "alphas.csv"), result["alphas"])
    corr = result.get("correlation")
    if corr is not None:
        _write_hist_csv(os.path.join(args.out, "rho_sample_hist.csv"), corr.rho_sample_hist)
    for k in range(min(args.dump_samples, batch.n_samples)):
        alpha = result["alphas"][k]
        if graphs is not None:
            doc = svg.side_by_side_svg(graphs[k], alpha)
        else:
            doc = svg.heatmap_svg(alpha, title=f"sample {k}")
        svg.write_svg(os.path.join(args.out, f"sample{k}_graph.svg"), doc)
    lines = [f"val_nll: {result['val_nll']!r}"]
    lines += [f"mse@{h}: {result['mse'][h]!r}" for h in sorted(result["mse"])]
    if corr is not None:
        lines += [f"rho_tot: {corr.rho_tot!r}", f"rho_sample: {corr.rho_sample_mean!r}",
                  f"pairs_used: {corr.n_pairs_used}",
                  f"undefined_samples: {corr.n_undefined_samples}"]
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def _load_external(path, sample_index):
    if path.endswith(".csv"):
        return load_trajectory_csv(path)
    batch = read_trajectories(path)
    if not (0 <= sample_index < batch.n_samples):
        raise DataError(f"{path}: sample index {sample_index} out of range "
                        f"(0..{batch.n_samples - 1})")
    return batch.data[sample_index], list(batch.state_layout)


def cmd_infer(args):
    from .model import forward

    params, cfg, _steps = _load_model(args.checkpoint, args.precision)
    data, layout = _load_external(args.input, args.sample_index)
    if data.shape[1] != cfg.n_agents:
        raise ConfigError(f"input has N={data.shape[1]}, checkpoint expects {cfg.n_agents}")
    if data.shape[2] != cfg.state_dim:
        raise ConfigError(f"input has S={data.shape[2]}, checkpoint expects {cfg.state_dim}")
    if data.shape[0] < cfg.t_enc:
        raise DataError(f"input has {data.shape[0]} steps, need at least t_enc={cfg.t_enc}")
    os.makedirs(args.out, exist_ok=True)
    dtype = next(iter(params.values())).data.dtype
    window = np.asarray(data[None, :cfg.t_enc], dtype=dtype)
    alpha_v, _mu, _sq, states = forward(params, cfg, window)
    alpha = alpha_v.data[0]
    path = states.data[0]

    pred_csv = os.path.join(args.out, "predicted.csv")
    with open(pred_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "agent"] + list(layout))
        for t in range(path.shape[0]):
            for a in range(path.shape[1]):
                writer.writerow([cfg.t_enc + t, a] + [repr(float(v)) for v in path[t, a]])
    _write_alphas_csv(os.path.join(args.out, "alpha.csv"), alpha[None])
    svg.write_svg(os.path.join(args.out, "alpha.svg"), svg.heatmap_svg(alpha, "inferred"))
    print(f"wrote {pred_csv} and inferred graph for N={cfg.n_agents}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args):
    did_anything = False
    if args.run:
        report_path = os.path.join(args.run, "report.csv")
        if not os.path.exists(report_path):
            raise DataError(f"no report.csv under {args.run}")
        config_hash, rows = read_report_csv(report_path)
        stats = [EpochStats(epoch=int(r["epoch"]),
                            train_nll=r["train_nll"], val_nll=r["val_nll"],
                            mse_10=r["mse_10"], mse_30=r["mse_30"], mse_50=r["mse_50"],
                            rho_tot=r["rho_tot"], rho_sample=r["rho_sample"],
                            wall_clock_s=r["wall_clock_s"]) for r in rows]
        print(report_summary(stats, config_hash), end="")
        did_anything = True
    if args.dataset:
        batch = read_trajectories(args.dataset)
        os.makedirs(args.out, exist_ok=True)
        out_csv = os.path.join(args.out, f"sample{args.sample}.csv")
        if not (0 <= args.sample < batch.n_samples):
            raise DataError(f"sample {args.sample} out of range")
        sample_to_csv(batch, args.sample, out_csv)
        print(f"wrote {out_csv}")
        did_anything = True
    if args.graphs:
        stack = read_graphs(args.graphs)
        if not (0 <= args.sample < stack.shape[0]):
            raise DataError(f"sample {args.sample} out of range")
        os.makedirs(args.out, exist_ok=True)
        out_svg = os.path.join(args.out, f"graph{args.sample}.svg")
        svg.write_svg(out_svg, svg.heatmap_svg(stack[args.sample], f"graph {args.sample}"))
        print(f"wrote {out_svg}")
        did_anything = True
    if not did_anything:
        raise ConfigError("report needs --run, --dataset, or --graphs")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command]
    try:
        if args.threads > 0:
            import threadpoolctl
            with threadpoolctl.threadpool_limits(limits=args.threads):
                return handler(args)
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
