"""Experiment harnesses: data preparation, ablations, sweeps, attention census, gradcheck.

Everything here is deterministic given the seeds in the configs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import spatial as sp
from . import tensor as tc
from . import temporal as tp
from .data import (ModalitySpec, MultimodalGraph, Normalizer, SynthConfig, SynthModality, WindowedDataset,
                   extend_graphs, fit_normalizer, grid_adjacency, grid_shape, joint_series, make_windows,
                   synth_generate, week_splits)
from .errors import ConfigError
from .gradcheck import GradCheckReport, grad_check
from .model import ABLATIONS, Checkpoint, ModelConfig, forward, init_params
from .training import (MetricsReport, TrainConfig, evaluate, historical_average, mae_loss,
                       modality_report, train)

ABLATION_VARIANTS: dict[str, dict[str, bool]] = {
    "full": {},
    "no_sa": {"no_sa": True},
    "no_agcn": {"no_agcn": True},
    "no_astar": {"no_astar": True},
    "no_fstcn": {"no_fstcn": True},
    "no_bstcn": {"no_bstcn": True},
}
LAYER_SWEEP = [1, 2, 3, 4, 5]
TOP_U_SWEEP: list[int | None] = [8, 16, 32, 64, 128, None]
# best rows of the reference sweeps on the joint taxi-bike task
REFERENCE_OPTIMA = {"st_layers": 2, "top_u": 16}


@dataclass
class Prepared:
    names: list[str]
    graph: MultimodalGraph
    normalizer: Normalizer
    dataset: WindowedDataset
    raw: np.ndarray
    split_bounds: list[tuple[str, int, int]]

    @property
    def node_counts(self) -> list[int]:
        return self.graph.sizes

    @property
    def features(self) -> int:
        return self.raw.shape[2]

    def train_span(self) -> np.ndarray:
        _, lo, hi = next(b for b in self.split_bounds if b[0] == "train")
        return self.raw[lo:hi]


def prepare(specs: Sequence[ModalitySpec], series: dict[str, np.ndarray], P: int, Q: int,
            split_bounds: Sequence[tuple[str, int, int]], method: str = "minmax") -> Prepared:
    """Joint graph, train-fitted normalizer and windowed normalized dataset."""
    names = [s.name for s in specs]
    graph = extend_graphs(specs)
    graph.assert_block_diagonal()
    raw = joint_series(series, names).astype(np.float64)
    _, lo, hi = next(b for b in split_bounds if b[0] == "train")
    normalizer = fit_normalizer(raw[lo:hi], graph.offsets, method)
    dataset = make_windows(normalizer.normalize(raw), P, Q, split_bounds)
    return Prepared(names, graph, normalizer, dataset, raw, list(split_bounds))


def model_config_for(prep: Prepared, **model_kw) -> ModelConfig:
    return ModelConfig(modality_names=prep.names, node_counts=prep.node_counts,
                       features=prep.features, **model_kw)


def train_and_evaluate(mcfg: ModelConfig, prep: Prepared, tcfg: TrainConfig, split: str = "test",
                       log=None) -> tuple[Checkpoint, list, MetricsReport]:
    ckpt, history = train(mcfg, prep.dataset, prep.graph, tcfg, log=log)
    ckpt.meta["normalizer"] = prep.normalizer.state()
    report = evaluate(ckpt, prep.dataset, split, prep.graph, prep.normalizer, prep.names)
    return ckpt, history, report


def baseline_report(prep: Prepared, split: str = "test") -> MetricsReport:
    """Historical-average baseline in original units."""
    targets = prep.normalizer.denormalize(prep.dataset.targets[split])
    pred = historical_average(prep.train_span(), targets)
    return modality_report(pred, targets, prep.names, prep.graph.offsets)


# ----------------------------------------------------------------- tables

def metric_columns(names: Sequence[str]) -> list[str]:
    return [f"{n}_{m}" for n in names for m in ("mae", "rmse", "pcc")]


def report_values(report: MetricsReport, names: Sequence[str]) -> list[float | None]:
    out = []
    for n in names:
        r = report[n]
        out += [r.mae, r.rmse, r.pcc]
    return out


def _cell(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, key: str, rows: list[tuple[str, MetricsReport]], names: Sequence[str],
                extra: dict[str, list[str]] | None = None) -> None:
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key] + metric_columns(names) + list(extra))
        for i, (label, report) in enumerate(rows):
            w.writerow([label] + [_cell(v) for v in report_values(report, names)]
                       + [extra[c][i] for c in extra])


def run_ablation_suite(base: ModelConfig, prep: Prepared, tcfg: TrainConfig, split: str = "test",
                       log=None, keep: dict | None = None) -> list[tuple[str, MetricsReport]]:
    """Train and evaluate every ablation variant with the same seed and budget.

    If ``keep`` is a dict it receives ``variant -> (checkpoint, history)``.
    """
    rows = []
    for variant, flags in ABLATION_VARIANTS.items():
        cfg = base.with_overrides(**({f: False for f in ABLATIONS} | flags))
        if log:
            log(f"ablation variant {variant}")
        ckpt, history, report = train_and_evaluate(cfg, prep, tcfg, split, log)
        if keep is not None:
            keep[variant] = (ckpt, history)
        rows.append((variant, report))
    return rows


def ablation_ordering(rows: list[tuple[str, MetricsReport]], names: Sequence[str]) -> list[str]:
    """Human-readable check of 'full beats every ablation on MAE' per modality."""
    full = dict(rows)["full"]
    lines = []
    for variant, report in rows:
        if variant == "full":
            continue
        for n in names:
            ok = full[n].mae <= report[n].mae
            lines.append(f"{n}: full MAE {full[n].mae:.6g} vs {variant} {report[n].mae:.6g} -> "
                         f"{'agrees with' if ok else 'differs from'} the reference ordering")
    return lines


def run_sweep(param: str, base: ModelConfig, prep: Prepared, tcfg: TrainConfig,
              values: Sequence | None = None, split: str = "test",
              log=None) -> list[tuple[str, MetricsReport]]:
    """Train/evaluate one row per value of ``st_layers`` or ``top_u`` (None = full)."""
    if param == "st_layers":
        values = LAYER_SWEEP if values is None else values
    elif param == "top_u":
        values = TOP_U_SWEEP if values is None else values
    else:
        raise ConfigError(f"sweep parameter must be st_layers or top_u, got {param!r}")
    rows = []
    for v in values:
        if log:
            log(f"sweep {param}={v}")
        cfg = base.with_overrides(**{param: v})
        _, _, report = train_and_evaluate(cfg, prep, tcfg, split, log)
        rows.append(("full" if v is None else str(v), report))
    return rows


# ----------------------------------------------------------------- attention census

@dataclass
class Census:
    names: list[str]
    counts: np.ndarray  # [target, source]

    def proportions(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.where(totals > 0, 100.0 * self.counts / np.maximum(totals, 1), 0.0)

    def write_csv(self, path) -> None:
        props = self.proportions()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target", "source", "count", "proportion_pct"])
            for i, t in enumerate(self.names):
                for j, s in enumerate(self.names):
                    w.writerow([t, s, int(self.counts[i, j]), repr(float(props[i, j]))])


def attention_census(ckpt: Checkpoint, dataset: WindowedDataset, split: str, graph,
                     batch_size: int = 256) -> Census:
    """Count Top-U survivors by (target modality, source modality) over a split."""
    cfg = ckpt.config
    if cfg.no_sa:
        raise ConfigError("the census needs the sparse attention branch (no_sa is set)")
    adjacency = graph.adjacency if hasattr(graph, "adjacency") else np.asarray(graph)
    x = dataset.inputs[split]
    counts = np.zeros((len(cfg.node_counts),) * 2, dtype=np.int64)
    with tc.no_grad():
        for i in range(0, x.shape[0], batch_size):
            diag: list[sp.AttentionState] = []
            forward(x[i:i + batch_size], ckpt.params, cfg, adjacency, diagnostics=diag)
            for state in diag:
                counts += sp.survivor_census(state.survivors, cfg.offsets)
    return Census(list(cfg.modality_names), counts)


# ----------------------------------------------------------------- gradient checks

def micro_config(**kw) -> ModelConfig:
    """The 2-modality micro-instance: N=[3,2], P=Q=4, F=1, D_h=4, L=1."""
    base = dict(modality_names=["m0", "m1"], node_counts=[3, 2], features=1, P=4, Q=4,
                d_h=4, st_layers=1, top_u=2, dropout=0.0, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def micro_graph(cfg: ModelConfig, seed: int = 0) -> np.ndarray:
    """Random symmetric per-modality graphs (self-loops forced), block-diagonal overall."""
    rng = np.random.default_rng(seed)
    specs = []
    for name, n in zip(cfg.modality_names, cfg.node_counts):
        a = (rng.random((n, n)) < 0.5).astype(np.uint8)
        specs.append(ModalitySpec(name, n, cfg.features, np.maximum(a, a.T)))
    return extend_graphs(specs).adjacency


def model_gradcheck(cfg: ModelConfig | None = None, h: float = 1e-5, tol: float = 1e-4,
                    seed: int = 0, batch: int = 2) -> GradCheckReport:
    """Finite-difference check of every model parameter through the MAE loss."""
    cfg = cfg or micro_config()
    rng = np.random.default_rng(seed)
    graph = micro_graph(cfg, seed)
    x = rng.uniform(0, 1, (batch, cfg.P, cfg.n_nodes, cfg.features))
    y = rng.uniform(0, 1, (batch, cfg.Q, cfg.n_nodes, cfg.features))
    params = init_params(cfg, seed)
    # biases start at zero; move them off the origin so they are exercised
    for t in params.values():
        if t.ndim == 1:
            t.data = rng.uniform(-0.1, 0.1, t.shape)
    return grad_check(lambda: mae_loss(forward(x, params, cfg, graph), y), params, h=h, tol=tol)


def op_gradchecks(seed: int = 0, h: float = 1e-5) -> dict[str, GradCheckReport]:
    """Op-level checks: matmul chain, masked softmax, dilated conv stack."""
    rng = np.random.default_rng(seed)
    out = {}
    a = tc.Tensor(rng.uniform(-2, 2, (4, 3)))
    b = tc.Tensor(rng.uniform(-2, 2, (3, 5)))
    c = tc.Tensor(rng.uniform(-2, 2, (5, 2)))
    out["matmul_chain"] = grad_check(lambda: tc.sum(tc.matmul(tc.matmul(a, b), c)), {"a": a, "b": b, "c": c},
                                     h=h, tol=1e-6)
    s = tc.Tensor(rng.uniform(-2, 2, (3, 5)))
    mask = rng.random((3, 5)) < 0.6
    mask[:, 0] = True
    wts = rng.uniform(-1, 1, (3, 5))
    out["softmax_mask"] = grad_check(
        lambda: tc.sum(tc.mul(tc.softmax_rows(tc.masked_fill_neginf(s, mask)), wts)), {"s": s}, h=h, tol=1e-5)
    x = tc.Tensor(rng.uniform(-2, 2, (2, 3, 9)))
    ws = {f"w{i}": tc.Tensor(rng.uniform(-1, 1, (3, 3, 2))) for i in range(len(tp.DILATIONS))}
    bs = {f"b{i}": tc.Tensor(rng.uniform(-0.5, 0.5, (3,))) for i in range(len(tp.DILATIONS))}
    proj = rng.uniform(-1, 1, (2, 3, 9))

    def conv_stack():
        hdn = x
        for i, d in enumerate(tp.DILATIONS):
            hdn = tc.conv1d_dilated(hdn, ws[f"w{i}"], bs[f"b{i}"], dilation=d)
            if i < len(tp.DILATIONS) - 1:
                hdn = tc.scalar_mul(hdn, 0.5)
        return tc.sum(tc.mul(hdn, proj))

    out["conv1d_stack"] = grad_check(conv_stack, {"x": x, **ws, **bs}, h=h, tol=1e-5)
    return out


def block_of(name: str) -> str:
    if name.startswith("embed"):
        return "embedding"
    if name.startswith("head"):
        return "mlp_head"
    if ".tmp.shared." in name:
        return "temporal_shared"
    if ".tmp.unique" in name:
        return "temporal_unique"
    if ".gcn." in name:
        return "spatial_gcn"
    return "spatial_attention"


def block_summary(report: GradCheckReport) -> dict[str, float]:
    out: dict[str, float] = {}
    for e in report.entries:
        blk = block_of(e.name)
        out[blk] = max(out.get(blk, 0.0), e.max_rel_err)
    return out


# ----------------------------------------------------------------- desk experiment

def desk_synth_config(seed: int = 0) -> SynthConfig:
    """Two coupled modalities on 30-min steps over 13 weeks: N=[24, 16], F=2."""
    mods = [SynthModality("taxi", 24, 400.0, 1.0), SynthModality("bike", 16, 12.0, 1.0)]
    return SynthConfig(mods, days=91, features=2, seed=seed)


def synth_specs(sc: SynthConfig) -> list[ModalitySpec]:
    return [ModalitySpec(m.name, m.node_count, sc.features, grid_adjacency(*grid_shape(m.node_count)))
            for m in sc.modalities]


@dataclass
class DeskResult:
    names: list[str]
    comparison: list[tuple[str, MetricsReport]]
    ablation: list[tuple[str, MetricsReport]]
    census: Census
    joint: Checkpoint
    joint_history: list
    deterministic: bool
    orderings: list[str]

    def all_finite(self) -> bool:
        return all(r.is_finite() for _, r in self.comparison + self.ablation)


def _same_run(a: tuple[Checkpoint, list], b: tuple[Checkpoint, list]) -> bool:
    """Bitwise equality of parameters and loss history (wall-clock time excluded)."""
    (ca, ha), (cb, hb) = a, b
    if ca.params.keys() != cb.params.keys():
        return False
    if any(not np.array_equal(ca.params[k].data, cb.params[k].data) for k in ca.params):
        return False
    strip = lambda h: [(r.epoch, r.train_mae, r.val_mae) for r in h]
    return strip(ha) == strip(hb)


def joint_vs_single_ordering(comparison: list[tuple[str, MetricsReport]], names: Sequence[str]) -> list[str]:
    rows = dict(comparison)
    lines = []
    for n in names:
        j, s = rows["joint"][n].mae, rows["single"][n].mae
        lines.append(f"{n}: joint MAE {j:.6g} vs single {s:.6g} -> "
                     f"{'agrees with' if j <= s else 'differs from'} the reference ordering")
    return lines


def desk_experiment(out_dir=None, model_kw: dict | None = None, tcfg: TrainConfig | None = None,
                    seed: int = 0, log=None) -> DeskResult:
    """Joint vs single-modality training, historical average, ablations and census.

    Every run shares the same seed and budget.  The ablation suite's ``full``
    row doubles as the repeat run for the determinism check.  When
    ``out_dir`` is given, comparison.csv, ablation.csv, census.csv and
    orderings.txt are written there.
    """
    model_kw = dict(d_h=16, d_f=4, seed=seed, **(model_kw or {}))
    tcfg = tcfg or TrainConfig(epochs=2, learning_rate=1e-3, seed=seed)
    sc = desk_synth_config(seed)
    series = synth_generate(sc)
    specs = synth_specs(sc)
    bounds = week_splits(sc.days * sc.steps_per_day, steps_per_day=sc.steps_per_day)
    P, Q = model_kw.pop("P", 12), model_kw.pop("Q", 12)
    prep = prepare(specs, series, P, Q, bounds)
    names = prep.names

    if log:
        log("joint run")
    mcfg = model_config_for(prep, P=P, Q=Q, **model_kw)
    joint_ckpt, joint_hist, joint_rep = train_and_evaluate(mcfg, prep, tcfg, log=log)

    single = MetricsReport()
    for spec in specs:
        if log:
            log(f"single-modality run {spec.name}")
        sprep = prepare([spec], {spec.name: series[spec.name]}, P, Q, bounds)
        _, _, rep = train_and_evaluate(model_config_for(sprep, P=P, Q=Q, **model_kw), sprep, tcfg, log=log)
        single.rows.append(rep[spec.name])
    comparison = [("joint", joint_rep), ("single", single), ("historical_average", baseline_report(prep))]

    kept: dict = {}
    ablation = run_ablation_suite(mcfg, prep, tcfg, log=log, keep=kept)
    deterministic = _same_run((joint_ckpt, joint_hist), kept["full"]) and \
        report_values(dict(ablation)["full"], names) == report_values(joint_rep, names)

    census = attention_census(joint_ckpt, prep.dataset, "test", prep.graph)
    orderings = joint_vs_single_ordering(comparison, names) + ablation_ordering(ablation, names)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "comparison.csv", "setting", comparison, names)
        write_table(out / "ablation.csv", "variant", ablation, names)
        census.write_csv(out / "census.csv")
        (out / "orderings.txt").write_text("\n".join(orderings) + "\n")
    return DeskResult(names, comparison, ablation, census, joint_ckpt, joint_hist, deterministic, orderings)


# ----------------------------------------------------------------- overfit probe

def overfit_prepared(samples: int = 8, P: int = 12, Q: int = 12, seed: int = 1) -> Prepared:
    """A two-modality series just long enough for ``samples`` windows, all in train."""
    sc = SynthConfig([SynthModality("a", 6, 10.0), SynthModality("b", 4, 2.0)], days=1, seed=seed)
    T = samples + P + Q - 1
    series = {k: v[:T] for k, v in synth_generate(sc).items()}
    return prepare(synth_specs(sc), series, P, Q, [("train", 0, T)])


def overfit_run(epochs: int = 500, learning_rate: float = 2e-3, seed: int = 0,
                prep: Prepared | None = None) -> tuple[Prepared, Checkpoint, list]:
    """Train a small model without dropout on the memorizable set."""
    prep = prep or overfit_prepared()
    cfg = model_config_for(prep, d_h=16, d_f=4, dropout=0.0, seed=seed)
    ckpt, history = train(cfg, prep.dataset, prep.graph,
                          TrainConfig(epochs=epochs, learning_rate=learning_rate, seed=seed))
    return prep, ckpt, history
