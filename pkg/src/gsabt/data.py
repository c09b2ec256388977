"""Modalities, the block-diagonal joint graph, scaling and windowing.

Series are ``T x N x F`` arrays (time-major). A joint series concatenates
the modality series along the node axis in modality order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, ValidationError

STEPS_PER_DAY = 48


@dataclass
class ModalitySpec:
    name: str
    node_count: int
    feature_count: int
    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"modality {self.name!r}: adjacency must be square, got {adj.shape}")
        if adj.shape[0] != self.node_count:
            raise ValidationError(
                f"modality {self.name!r}: adjacency is {adj.shape[0]}x{adj.shape[0]} "
                f"but node_count is {self.node_count}")
        if not np.isin(adj, (0, 1)).all():
            raise ValidationError(f"modality {self.name!r}: adjacency entries must be 0 or 1")
        if self.node_count < 1 or self.feature_count < 1:
            raise ValidationError(f"modality {self.name!r}: node and feature counts must be positive")
        adj = adj.astype(np.uint8)
        np.fill_diagonal(adj, 1)
        self.adjacency = adj


@dataclass
class MultimodalGraph:
    adjacency: np.ndarray
    offsets: list[int]
    names: list[str] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def sizes(self) -> list[int]:
        return list(np.diff(self.offsets + [self.node_count]))

    def block(self, m: int) -> tuple[int, int]:
        return self.offsets[m], self.offsets[m] + self.sizes[m]

    def modality_of_node(self) -> np.ndarray:
        ids = np.empty(self.node_count, dtype=np.int64)
        for m in range(len(self.offsets)):
            lo, hi = self.block(m)
            ids[lo:hi] = m
        return ids

    def assert_block_diagonal(self) -> None:
        ids = self.modality_of_node()
        cross = ids[:, None] != ids[None, :]
        if self.adjacency[cross].any():
            raise ValidationError("joint graph has edges between different modalities")


def extend_graphs(specs: Sequence[ModalitySpec]) -> MultimodalGraph:
    """Place each modality adjacency on the diagonal, zero elsewhere."""
    if not specs:
        raise ValidationError("at least one modality is required")
    n_total = sum(s.node_count for s in specs)
    joint = np.zeros((n_total, n_total), dtype=np.uint8)
    offsets = []
    start = 0
    for s in specs:
        offsets.append(start)
        joint[start:start + s.node_count, start:start + s.node_count] = s.adjacency
        start += s.node_count
    return MultimodalGraph(joint, offsets, [s.name for s in specs])


def grid_adjacency(rows: int, cols: int) -> np.ndarray:
    """4-neighbourhood grid graph with self-loops, nodes in row-major order."""
    n = rows * cols
    adj = np.eye(n, dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                adj[i, i + 1] = adj[i + 1, i] = 1
            if r + 1 < rows:
                adj[i, i + cols] = adj[i + cols, i] = 1
    return adj


def grid_shape(n: int) -> tuple[int, int]:
    """Most square rows x cols factorisation of n."""
    rows = int(np.floor(np.sqrt(n)))
    while n % rows:
        rows -= 1
    return rows, n // rows


# ----------------------------------------------------------------- scaling

class Normalizer:
    """Per-modality scaling fitted on the training span.

    ``method='minmax'`` maps training data to [0, 1]; ``'zscore'`` is
    available for experiments. A constant modality maps to 0 and
    denormalizes back to its constant.
    """

    def __init__(self, offsets: Sequence[int], node_count: int, method: str = "minmax"):
        if method not in ("minmax", "zscore"):
            raise ConfigError(f"unknown normalization method {method!r}")
        self.offsets = list(offsets)
        self.node_count = node_count
        self.method = method
        self.shift = np.zeros(len(self.offsets))
        self.scale = np.ones(len(self.offsets))
        self.constant = np.zeros(len(self.offsets), dtype=bool)

    def _bounds(self):
        ends = self.offsets[1:] + [self.node_count]
        return list(zip(self.offsets, ends))

    def fit(self, train_series: np.ndarray) -> "Normalizer":
        """``train_series`` is the training span, shape ``T x N_M x F``."""
        if train_series.size == 0:
            raise InsufficientDataError("cannot fit a normalizer on an empty series")
        for m, (lo, hi) in enumerate(self._bounds()):
            part = np.asarray(train_series[:, lo:hi], dtype=np.float64)
            if self.method == "minmax":
                shift, spread = part.min(), part.max() - part.min()
            else:
                shift, spread = part.mean(), part.std()
            self.shift[m] = shift
            if spread == 0:
                warnings.warn(f"modality {m} is constant on the training span", stacklevel=2)
                self.constant[m] = True
                self.scale[m] = 1.0
            else:
                self.scale[m] = spread
        return self

    def _per_node(self, values: np.ndarray) -> np.ndarray:
        out = np.empty(self.node_count)
        for m, (lo, hi) in enumerate(self._bounds()):
            out[lo:hi] = values[m]
        return out

    def normalize(self, x: np.ndarray, node_axis: int = -2) -> np.ndarray:
        shape = [1] * np.ndim(x)
        shape[node_axis] = self.node_count
        shift = self._per_node(self.shift).reshape(shape)
        scale = self._per_node(self.scale).reshape(shape)
        const = self._per_node(self.constant.astype(float)).reshape(shape)
        return np.where(const > 0, 0.0, (x - shift) / scale)

    def denormalize(self, x: np.ndarray, node_axis: int = -2) -> np.ndarray:
        shape = [1] * np.ndim(x)
        shape[node_axis] = self.node_count
        shift = self._per_node(self.shift).reshape(shape)
        scale = self._per_node(self.scale).reshape(shape)
        const = self._per_node(self.constant.astype(float)).reshape(shape)
        return np.where(const > 0, shift + 0.0 * x, x * scale + shift)

    def state(self) -> dict:
        return {"method": self.method, "offsets": self.offsets, "node_count": self.node_count,
                "shift": self.shift.tolist(), "scale": self.scale.tolist(),
                "constant": self.constant.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "Normalizer":
        norm = cls(state["offsets"], state["node_count"], state["method"])
        norm.shift = np.array(state["shift"], dtype=np.float64)
        norm.scale = np.array(state["scale"], dtype=np.float64)
        norm.constant = np.array(state["constant"], dtype=bool)
        return norm


def fit_normalizer(train_series: np.ndarray, offsets: Sequence[int], method: str = "minmax") -> Normalizer:
    return Normalizer(offsets, train_series.shape[1], method).fit(train_series)


# ----------------------------------------------------------------- windows

@dataclass
class WindowedDataset:
    """Sliding windows per split: ``inputs[s]`` is ``S x P x N x F``."""

    inputs: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    origins: dict[str, np.ndarray]
    P: int
    Q: int

    def count(self, split: str) -> int:
        return self.inputs[split].shape[0]


def window_count(span: int, P: int, Q: int) -> int:
    return max(span - P - Q + 1, 0)


def make_windows(series: np.ndarray, P: int, Q: int,
                 split_bounds: Sequence[tuple[str, int, int]] | None = None) -> WindowedDataset:
    """All (P input, Q target) pairs fully inside each ``(name, start, stop)`` span.

    ``origins[s][k]`` is the last input step t; inputs cover [t-P+1, t] and
    targets [t+1, t+Q].
    """
    T = series.shape[0]
    if P < 1 or Q < 1:
        raise ConfigError(f"P and Q must be >= 1, got P={P}, Q={Q}")
    if T < P + Q:
        raise InsufficientDataError(f"series has {T} steps, need at least P+Q={P + Q}")
    if split_bounds is None:
        split_bounds = [("train", 0, T)]
    inputs, targets, origins = {}, {}, {}
    for name, start, stop in split_bounds:
        if not 0 <= start <= stop <= T:
            raise ConfigError(f"split {name!r} bounds [{start}, {stop}) outside [0, {T})")
        n = window_count(stop - start, P, Q)
        t = start + P - 1 + np.arange(n)
        idx_in = t[:, None] + np.arange(-P + 1, 1)[None, :]
        idx_out = t[:, None] + np.arange(1, Q + 1)[None, :]
        inputs[name] = series[idx_in]
        targets[name] = series[idx_out]
        origins[name] = t
    return WindowedDataset(inputs, targets, origins, P, Q)


def week_splits(T: int, weeks: Sequence[int] = (9, 2, 2),
                steps_per_day: int = STEPS_PER_DAY) -> list[tuple[str, int, int]]:
    """Contiguous train/val/test spans measured in weeks."""
    per_week = 7 * steps_per_day
    spans = [w * per_week for w in weeks]
    if sum(spans) > T:
        raise InsufficientDataError(f"{sum(spans)} steps requested by the split, series has {T}")
    bounds, start = [], 0
    for name, span in zip(("train", "val", "test"), spans):
        bounds.append((name, start, start + span))
        start += span
    return bounds


def fraction_splits(T: int, fractions: Sequence[float] = (0.7, 0.15, 0.15)) -> list[tuple[str, int, int]]:
    cuts = np.round(np.cumsum([0.0] + list(fractions)) / np.sum(fractions) * T).astype(int)
    return [(name, int(lo), int(hi)) for name, lo, hi in zip(("train", "val", "test"), cuts[:-1], cuts[1:])]


# ----------------------------------------------------------------- synthetic data

@dataclass
class SynthModality:
    name: str
    node_count: int
    scale: float = 1.0
    coupling: float = 1.0


@dataclass
class SynthConfig:
    """Knobs of the synthetic demand generator.

    Node n of modality m at step t:
    ``scale_m * (base + a1 sin(2 pi t/48) + a2 sin(4 pi t/48 + phi_n)
    + coupling_m * latent(t) + noise)``, clipped at 0. ``latent`` is a
    shared AR(1) process, the only source of cross-modal co-movement
    beyond the common daily cycle.
    """

    modalities: list[SynthModality]
    days: int = 7
    features: int = 1
    base: float = 1.0
    a1: float = 0.6
    a2: float = 0.3
    noise: float = 0.05
    latent_std: float = 0.15
    latent_ar: float = 0.95
    steps_per_day: int = STEPS_PER_DAY
    seed: int = 0


def synth_generate(cfg: SynthConfig) -> dict[str, np.ndarray]:
    """Deterministic multimodal series, one ``T x N_m x F`` array per modality."""
    if cfg.days < 1:
        raise ConfigError(f"days must be >= 1, got {cfg.days}")
    rng = np.random.default_rng(cfg.seed)
    T = cfg.days * cfg.steps_per_day
    # phase index t mod period keeps zero-noise output bit-exactly periodic
    phase = (np.arange(T) % cfg.steps_per_day) / cfg.steps_per_day
    daily = np.sin(2 * np.pi * phase)

    latent = np.zeros(T)
    if cfg.latent_std > 0:
        shocks = rng.normal(0.0, cfg.latent_std, T)
        innov = np.sqrt(1.0 - cfg.latent_ar ** 2)
        latent[0] = shocks[0]
        for t in range(1, T):
            latent[t] = cfg.latent_ar * latent[t - 1] + innov * shocks[t]

    out = {}
    for mod in cfg.modalities:
        shape = (mod.node_count, cfg.features)
        phi = rng.uniform(0.0, 2 * np.pi, shape)
        feat_gain = 1.0 + 0.25 * np.arange(cfg.features)[None, :]
        node_gain = rng.uniform(0.8, 1.2, shape) * feat_gain
        semi = np.sin(4 * np.pi * phase[:, None, None] + phi[None])
        x = (cfg.base
             + cfg.a1 * daily[:, None, None] * node_gain[None]
             + cfg.a2 * semi
             + mod.coupling * latent[:, None, None])
        if cfg.noise > 0:
            x = x + rng.normal(0.0, cfg.noise, x.shape)
        out[mod.name] = np.maximum(mod.scale * x, 0.0)
    return out


def joint_series(series: dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    """Concatenate modality series along the node axis in ``names`` order."""
    parts = [series[n] for n in names]
    T = {p.shape[0] for p in parts}
    F = {p.shape[2] for p in parts}
    if len(T) != 1 or len(F) != 1:
        raise ValidationError("modalities must share the time axis and the feature count")
    return np.concatenate(parts, axis=1)
