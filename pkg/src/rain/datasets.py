"""Dataset generation and the RAIN1 portable file format.

A RAIN1 file is a small textual header (key=value lines between the magic
line and an ``end`` line) followed by one raw little-endian float32 block in
row-major order: (sample, t, agent, variable) for trajectories and
(sample, i, j) for graphs.
"""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .graphs import InteractionGraph, build_multilayer_graph, sample_interaction_graph
from .simulate import (KURAMOTO_LAYOUT, SPRING_LAYOUT, kuramoto_config,
                       simulate_kuramoto, simulate_springs, spring_config)

MAGIC = "RAIN1"

TASK_LAYOUTS = {"spring": list(SPRING_LAYOUT), "kuramoto": list(KURAMOTO_LAYOUT)}


@dataclass
class TrajectoryBatch:
    data: np.ndarray  # (samples, T, N, S) float32
    task: str
    state_layout: list
    seed: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise DataError(f"trajectory data must be 4-D, got shape {self.data.shape}")
        if self.task in TASK_LAYOUTS and list(self.state_layout) != TASK_LAYOUTS[self.task]:
            raise DataError(f"task {self.task!r} requires layout {TASK_LAYOUTS[self.task]}, "
                            f"got {list(self.state_layout)}")
        if self.data.shape[3] != len(self.state_layout):
            raise DataError("state dimension does not match layout length")
        if not np.isfinite(self.data).all():
            raise DataError("trajectory data contains non-finite values")

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_steps(self):
        return self.data.shape[1]

    @property
    def n_agents(self):
        return self.data.shape[2]

    @property
    def state_dim(self):
        return self.data.shape[3]


@dataclass
class MultilayerSpec:
    """Layered-graph preset; the default is two dense 5-agent layers joined by
    a single weak link between agents 3 and 8."""

    layer_sizes: tuple = (5, 5)
    intra_weight_range: tuple = (0.5, 1.0)
    inter_links: tuple = ((3, 8, 0.3),)

    @property
    def n_agents(self):
        return int(sum(self.layer_sizes))


def sample_seed_sequence(seed, sample_index):
    """Per-sample seed stream; independent of generation order."""
    return np.random.SeedSequence((int(seed), int(sample_index)))


def _sample_graph(task_graph, n_agents, p, rng):
    if isinstance(task_graph, MultilayerSpec):
        return build_multilayer_graph(task_graph.layer_sizes,
                                      task_graph.intra_weight_range,
                                      task_graph.inter_links, rng=rng)
    return sample_interaction_graph(n_agents, p, symmetric=True, rng=rng)


def generate_samples(task, n_samples, n_agents, p, seed, sim_config=None, multilayer=None):
    """Simulate ``n_samples`` (trajectory, graph) pairs with per-sample seeds.

    Returns (TrajectoryBatch, list[InteractionGraph]).
    """
    if task not in TASK_LAYOUTS:
        raise ConfigError(f"unknown task {task!r}; expected one of {sorted(TASK_LAYOUTS)}")
    if multilayer is not None:
        n_agents = multilayer.n_agents
    if sim_config is None:
        sim_config = spring_config(seed) if task == "spring" else kuramoto_config(seed)

    simulate = simulate_springs if task == "spring" else simulate_kuramoto
    t_stored = sim_config.n_steps_stored
    s_dim = len(TASK_LAYOUTS[task])
    data = np.empty((n_samples, t_stored, n_agents, s_dim), dtype=np.float32)
    graphs = []
    for idx in range(n_samples):
        rng = np.random.default_rng(sample_seed_sequence(seed, idx))
        graph = _sample_graph(multilayer, n_agents, p, rng)
        states = simulate(graph, sim_config, rng)
        data[idx] = states.astype(np.float32)
        graphs.append(graph)
    batch = TrajectoryBatch(data=data, task=task, state_layout=TASK_LAYOUTS[task], seed=seed)
    return batch, graphs


# ---------------------------------------------------------------------------
# RAIN1 file I/O


def _write_header(fh, fields):
    fh.write((MAGIC + "\n").encode("ascii"))
    for key, value in fields.items():
        fh.write(f"{key}={value}\n".encode("ascii"))
    fh.write(b"end\n")


def _read_header(fh, path):
    magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    fields = {}
    while True:
        line = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if line == "end":
            return fields
        if line == "" or "=" not in line:
            raise DataError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value


def write_trajectories(path, batch):
    with open(path, "wb") as fh:
        _write_header(fh, {
            "kind": "trajectories",
            "task": batch.task,
            "samples": batch.n_samples,
            "T": batch.n_steps,
            "N": batch.n_agents,
            "S": batch.state_dim,
            "layout": ",".join(batch.state_layout),
            "seed": batch.seed,
        })
        fh.write(np.ascontiguousarray(batch.data, dtype="<f4").tobytes())


def read_trajectories(path):
    with open(path, "rb") as fh:
        fields = _read_header(fh, path)
        if fields.get("kind") != "trajectories":
            raise DataError(f"{path}: kind={fields.get('kind')!r}, expected trajectories")
        shape = tuple(int(fields[d]) for d in ("samples", "T", "N", "S"))
        blob = fh.read()
    expected = int(np.prod(shape)) * 4
    if len(blob) != expected:
        raise DataError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4").reshape(shape)
    return TrajectoryBatch(data=data.copy(), task=fields["task"],
                           state_layout=fields["layout"].split(","),
                           seed=int(fields.get("seed", 0)))


def write_graphs(path, graphs, task, seed):
    n = graphs[0].n_agents
    data = np.stack([g.weights for g in graphs]).astype("<f4")
    with open(path, "wb") as fh:
        _write_header(fh, {
            "kind": "graphs",
            "task": task,
            "samples": len(graphs),
            "N": n,
            "seed": seed,
        })
        fh.write(np.ascontiguousarray(data).tobytes())


def read_graphs(path):
    """Returns the stacked (samples, N, N) float32 weight array."""
    with open(path, "rb") as fh:
        fields = _read_header(fh, path)
        if fields.get("kind") != "graphs":
            raise DataError(f"{path}: kind={fields.get('kind')!r}, expected graphs")
        samples, n = int(fields["samples"]), int(fields["N"])
        blob = fh.read()
    expected = samples * n * n * 4
    if len(blob) != expected:
        raise DataError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f4").reshape(samples, n, n).copy()


def generate_dataset(task, n_samples, n_agents, p, seed, data_path, graphs_path,
                     sim_config=None, multilayer=None):
    """Generate and write a dataset plus its ground-truth graphs."""
    batch, graphs = generate_samples(task, n_samples, n_agents, p, seed,
                                     sim_config=sim_config, multilayer=multilayer)
    write_trajectories(data_path, batch)
    write_graphs(graphs_path, graphs, task, seed)
    return batch, graphs


# ---------------------------------------------------------------------------
# CSV import/export of single samples


def sample_to_csv(batch, sample_index, path):
    """Write one sample as rows of (t, agent, var...) for inspection or re-import."""
    sample = batch.data[sample_index]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "agent"] + list(batch.state_layout))
        for t in range(sample.shape[0]):
            for a in range(sample.shape[1]):
                writer.writerow([t, a] + [repr(float(v)) for v in sample[t, a]])


def load_trajectory_csv(path):
    """Read a (t, agent, var...) CSV into a (T, N, S) float32 array.

    Row order is normalized; missing or duplicated (t, agent) cells and ragged
    rows are rejected with the offending line number.
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0].strip() != "t" or header[1].strip() != "agent":
            raise DataError(f"{path}: line 1: header must start with t,agent")
        layout = [h.strip() for h in header[2:]]
        s_dim = len(layout)
        cells = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + s_dim:
                raise DataError(f"{path}: line {line_no}: expected {2 + s_dim} fields, got {len(row)}")
            try:
                t = int(row[0])
                agent = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: {exc}") from None
            if t < 0 or agent < 0:
                raise DataError(f"{path}: line {line_no}: negative t or agent index")
            if (t, agent) in cells:
                raise DataError(f"{path}: line {line_no}: duplicate cell (t={t}, agent={agent})")
            cells[(t, agent)] = values
    if not cells:
        raise DataError(f"{path}: no data rows")
    n_steps = max(t for t, _ in cells) + 1
    n_agents = max(a for _, a in cells) + 1
    if len(cells) != n_steps * n_agents:
        raise DataError(f"{path}: data is not rectangular "
                        f"({len(cells)} cells for {n_steps} steps x {n_agents} agents)")
    data = np.empty((n_steps, n_agents, s_dim), dtype=np.float32)
    for (t, agent), values in cells.items():
        data[t, agent] = values
    return data, layout
