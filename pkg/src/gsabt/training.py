"""Loss, metrics, Adam, the training loop and per-modality evaluation."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import tensor as tc
from .data import Normalizer, WindowedDataset
from .errors import ConfigError, NumericError, ShapeError
from .model import Checkpoint, ModelConfig, clone_params, forward, init_params, predict
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"
    clip_norm: float | None = 5.0
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------- loss & metrics

def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at zero residual is 0."""
    target = tc.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return tc.mean(tc.abs(tc.sub(pred, target)))


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    return float(np.mean(np.abs(true - pred)))


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    return float(np.sqrt(np.mean((true - pred) ** 2)))


#: |r| this close to 1 is within the rounding error of the computation itself
_PCC_SNAP = 8 * np.finfo(np.float64).eps


def pcc(pred: np.ndarray, true: np.ndarray) -> float | None:
    """Pearson correlation; ``None`` when either side is constant.

    Results within a few ulps of +-1 are returned as exactly +-1, so
    perfectly (anti-)correlated inputs score exactly.
    """
    p = np.ravel(pred) - np.mean(pred)
    y = np.ravel(true) - np.mean(true)
    sp, sy = np.sqrt(np.sum(p * p)), np.sqrt(np.sum(y * y))
    if sp == 0 or sy == 0:
        return None
    r = float(np.sum(p * y) / (sp * sy))
    if abs(r) >= 1.0 - _PCC_SNAP:
        return float(np.sign(r))
    return r


@dataclass
class MetricRow:
    modality: str
    mae: float
    rmse: float
    pcc: float | None
    n: int


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    def __getitem__(self, modality: str) -> MetricRow:
        for r in self.rows:
            if r.modality == modality:
                return r
        raise KeyError(modality)

    def is_finite(self) -> bool:
        vals = [v for r in self.rows for v in (r.mae, r.rmse, r.pcc) if v is not None]
        return bool(np.all(np.isfinite(vals)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["modality", "mae", "rmse", "pcc", "n"])
            for r in self.rows:
                w.writerow([r.modality, _fmt(r.mae), _fmt(r.rmse), _fmt(r.pcc), r.n])


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else repr(float(v))


def metrics(pred: np.ndarray, true: np.ndarray, modality: str = "all") -> MetricRow:
    if pred.shape != true.shape:
        raise ShapeError(f"prediction {pred.shape} and target {true.shape} differ")
    if pred.size == 0:
        raise ShapeError("metrics need at least one value")
    return MetricRow(modality, mae(pred, true), rmse(pred, true), pcc(pred, true), int(pred.size))


def modality_report(pred: np.ndarray, true: np.ndarray, names: Sequence[str],
                    offsets: Sequence[int]) -> MetricsReport:
    """Per-modality rows (slices of the node axis) plus an ``overall`` row."""
    n_nodes = pred.shape[-2]
    bounds = list(zip(offsets, list(offsets[1:]) + [n_nodes]))
    report = MetricsReport()
    for name, (lo, hi) in zip(names, bounds):
        report.rows.append(metrics(pred[..., lo:hi, :], true[..., lo:hi, :], name))
    report.rows.append(metrics(pred, true, "overall"))
    return report


# ----------------------------------------------------------------- optimizers

def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = global_norm(list(grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


class Adam:
    """Adam with bias correction."""

    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p.data)
                self.v[k] = np.zeros_like(p.data)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        for k, p in params.items():
            p.data = p.data - self.lr * grads[k]


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(cfg.learning_rate)


# ----------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float | None
    wall_ms: int


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mae", "val_mae", "wall_ms"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_mae), _fmt(r.val_mae), r.wall_ms])


def split_mae(params, cfg: ModelConfig, graph: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Normalized-space MAE of eval-mode predictions."""
    return mae(predict(x, params, cfg, graph), y)


def train_step(params: dict[str, Tensor], cfg: ModelConfig, graph: np.ndarray, x: np.ndarray,
               y: np.ndarray, optimizer, clip_norm: float | None, rng: np.random.Generator) -> float:
    for p in params.values():
        p.zero_grad()
    loss = mae_loss(forward(x, params, cfg, graph, training=True, rng=rng), y)
    loss.backward()
    grads = {k: p.grad for k, p in params.items()}
    clip_global_norm(grads, clip_norm)
    optimizer.step(params, grads)
    return float(loss.data)


def train(cfg: ModelConfig, dataset: WindowedDataset, graph, tcfg: TrainConfig,
          params: dict[str, Tensor] | None = None, log=None) -> tuple[Checkpoint, list[EpochRecord]]:
    """Minimize MAE on the train split; keep the parameters with the best val MAE.

    Batch order comes from a generator seeded by ``tcfg.seed``; dropout masks
    from an independent child stream, so reruns are bit-identical.
    """
    adjacency = graph.adjacency if hasattr(graph, "adjacency") else np.asarray(graph)
    if hasattr(graph, "assert_block_diagonal"):
        graph.assert_block_diagonal()
    params = init_params(cfg) if params is None else params
    x_tr, y_tr = dataset.inputs["train"], dataset.targets["train"]
    if x_tr.shape[0] == 0:
        raise ConfigError("training split is empty")
    has_val = "val" in dataset.inputs and dataset.inputs["val"].shape[0] > 0
    shuffle_seq, dropout_seq = np.random.SeedSequence(tcfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    opt = make_optimizer(tcfg)

    history: list[EpochRecord] = []
    best_val, best_params, best_epoch = np.inf, clone_params(params), 0
    stale = 0
    n = x_tr.shape[0]
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[lo:lo + tcfg.batch_size]
            try:
                loss = train_step(params, cfg, adjacency, x_tr[idx], y_tr[idx], opt, tcfg.clip_norm, dropout_rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch}, batch {b}: loss is {loss}")
            total += loss * len(idx)
        train_mae = total / n
        val = split_mae(params, cfg, adjacency, dataset.inputs["val"], dataset.targets["val"]) if has_val else None
        history.append(EpochRecord(epoch, train_mae, val, int(round((time.perf_counter() - t0) * 1000))))
        if log:
            log(f"epoch {epoch}: train_mae={train_mae:.6f} val_mae={val if val is None else f'{val:.6f}'}")
        score = val if val is not None else train_mae
        if score < best_val:
            best_val, best_params, best_epoch, stale = score, clone_params(params), epoch, 0
        else:
            stale += 1
            if tcfg.patience is not None and stale >= tcfg.patience:
                break
    if not history:
        best_params = clone_params(params)
    meta = {"best_epoch": best_epoch, "best_val_mae": None if not np.isfinite(best_val) else float(best_val)}
    return Checkpoint(best_params, cfg, meta), history


def evaluate(ckpt: Checkpoint, dataset: WindowedDataset, split: str, graph, normalizer: Normalizer,
             names: Sequence[str] | None = None) -> MetricsReport:
    """Eval-mode predictions, denormalized per modality, scored per modality and overall."""
    cfg = ckpt.config
    names = list(names or cfg.modality_names)
    if names != cfg.modality_names:
        raise ConfigError(f"checkpoint modalities {cfg.modality_names} differ from data modalities {names}")
    adjacency = graph.adjacency if hasattr(graph, "adjacency") else np.asarray(graph)
    x, y = dataset.inputs[split], dataset.targets[split]
    if x.shape[2] != cfg.n_nodes:
        raise ConfigError(f"data has {x.shape[2]} nodes, checkpoint expects {cfg.n_nodes}")
    pred = predict(x, ckpt.params, cfg, adjacency)
    return modality_report(normalizer.denormalize(pred), normalizer.denormalize(y), names, cfg.offsets)


def historical_average(train_series: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Predict every target step as the per-node, per-feature training mean."""
    mean = train_series.mean(axis=0)
    return np.broadcast_to(mean, targets.shape).copy()
