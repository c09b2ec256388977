"""End-to-end GSABT: embedding, stacked ST-layers with residuals, MLP head.

Hidden state layout is ``B x N x P x D_f``: one ``D_f``-wide vector per node
and input step. The spatial block scores node pairs from the flattened
``P*D_f`` window of each node; its value path and GCN act per step with
``D_f x D_f`` weights. The temporal block treats the ``N*D_f`` node-major
features as convolution channels over the P steps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import spatial as sp
from . import tensor as tc
from . import temporal as tp
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"GSAB"
CHECKPOINT_VERSION = 1
ABLATIONS = ("no_sa", "no_agcn", "no_astar", "no_fstcn", "no_bstcn")


@dataclass
class ModelConfig:
    modality_names: list[str]
    node_counts: list[int]
    features: int = 1
    P: int = 12
    Q: int = 12
    d_h: int = 64
    d_f: int | None = None
    st_layers: int = 2
    top_u: int | None = 16
    dropout: float = 0.1
    heads: int = 1
    head_hidden: int | None = None
    no_sa: bool = False
    no_agcn: bool = False
    no_astar: bool = False
    no_fstcn: bool = False
    no_bstcn: bool = False
    graph_attention: str = "masked_softmax"
    stage_order: str = "spatial_first"
    seed: int = 0

    def __post_init__(self):
        if self.d_f is None:
            self.d_f = self.d_h
        if self.head_hidden is None:
            self.head_hidden = 4 * self.d_h
        self.node_counts = [int(n) for n in self.node_counts]
        self.modality_names = list(self.modality_names)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return sum(self.node_counts)

    @property
    def offsets(self) -> list[int]:
        return [int(o) for o in np.cumsum([0] + self.node_counts[:-1])]

    @property
    def effective_top_u(self) -> int:
        return self.n_nodes if self.top_u is None else min(self.top_u, self.n_nodes)

    def validate(self) -> None:
        if len(self.modality_names) != len(self.node_counts) or not self.node_counts:
            raise ConfigError("modality_names and node_counts must be non-empty and equally long")
        for name in ("features", "P", "Q", "d_h", "d_f", "st_layers", "heads", "head_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(n < 1 for n in self.node_counts):
            raise ConfigError(f"node counts must be positive, got {self.node_counts}")
        if self.top_u is not None and self.top_u < 1:
            raise ConfigError(f"top_u must be >= 1 or null for full attention, got {self.top_u}")
        if self.d_h % self.heads:
            raise ConfigError(f"d_h={self.d_h} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.no_sa and self.no_agcn:
            raise ConfigError("no_sa and no_agcn together remove the whole spatial block")
        if self.no_fstcn and self.no_bstcn:
            raise ConfigError("no_fstcn and no_bstcn together remove the whole temporal block")
        if self.graph_attention not in ("masked_softmax", "literal_product"):
            raise ConfigError(f"unknown graph_attention {self.graph_attention!r}")
        if self.stage_order not in ("spatial_first", "temporal_first"):
            raise ConfigError(f"unknown stage_order {self.stage_order!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        d = self.to_dict()
        d.update(kw)
        return ModelConfig.from_dict(d)


# ----------------------------------------------------------------- parameters

def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in census (= initialization = checkpoint) order."""
    F, P, Q, D, Df = cfg.features, cfg.P, cfg.Q, cfg.d_h, cfg.d_f
    K = tp.KERNEL_SIZE
    shapes: list[tuple[str, tuple[int, ...]]] = [("embed.w", (F, Df)), ("embed.b", (Df,))]
    channels = [cfg.n_nodes * Df] + [n * Df for n in cfg.node_counts]
    stacks = ["shared."] + [f"unique{m}." for m in range(len(cfg.node_counts))]
    for layer in range(cfg.st_layers):
        pre = f"l{layer}."
        shapes += [
            (pre + "w_q", (P * Df, D)), (pre + "b_q", (D,)),
            (pre + "w_k", (P * Df, D)), (pre + "b_k", (D,)),
            (pre + "w_v", (Df, Df)), (pre + "b_v", (Df,)),
            (pre + "gcn.w0", (Df, Df)), (pre + "gcn.w1", (Df, Df)),
        ]
        for stack, C in zip(stacks, channels):
            for direction in ("fwd", "bwd"):
                for wk, bk in tp.stcn_keys(f"{pre}tmp.{stack}", direction):
                    shapes += [(wk, (C, C, K)), (bk, (C,))]
    shapes += [
        ("head.w1", (P * Df, cfg.head_hidden)), ("head.b1", (cfg.head_hidden,)),
        ("head.w2", (cfg.head_hidden, Q * F)), ("head.b2", (Q * F,)),
    ]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter total, independent of :func:`param_shapes`."""
    F, P, Q, D, Df, Hd = cfg.features, cfg.P, cfg.Q, cfg.d_h, cfg.d_f, cfg.head_hidden
    n_dir, n_layers, K = 2, len(tp.DILATIONS), tp.KERNEL_SIZE

    def bitcn(C):
        return n_dir * n_layers * (K * C * C + C)

    spatial = 2 * (P * Df * D + D) + (Df * Df + Df) + 2 * Df * Df
    temporal = bitcn(cfg.n_nodes * Df) + sum(bitcn(n * Df) for n in cfg.node_counts)
    head = P * Df * Hd + Hd + Hd * Q * F + Q * F
    return (F * Df + Df) + cfg.st_layers * (spatial + temporal) + head


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Glorot-uniform weights and zero biases, drawn in census order."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            if len(shape) == 3:
                fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
            else:
                fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def census_text(params: dict[str, Tensor]) -> str:
    lines = [f"{name}\t{'x'.join(map(str, t.shape))}\t{t.size}" for name, t in params.items()]
    lines.append(f"total\t-\t{sum(t.size for t in params.values())}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- forward

def _spatial(h: Tensor, params, cfg: ModelConfig, pre: str, graph: np.ndarray,
             diagnostics: list | None) -> Tensor:
    B, N, P, Df = h.shape
    flat = tc.reshape(h, (B, N, P * Df))
    q = sp.project(flat, params[pre + "w_q"], params[pre + "b_q"])
    k = sp.project(flat, params[pre + "w_k"], params[pre + "b_k"])
    v = sp.project(h, params[pre + "w_v"], params[pre + "b_v"])
    dk = cfg.d_h // cfg.heads
    fixed = sp.fixed_graph_weights(graph, B) if cfg.no_astar else None
    outs = []
    for hd in range(cfg.heads):
        qh = q if cfg.heads == 1 else tc.slice(q, 2, hd * dk, (hd + 1) * dk)
        kh = k if cfg.heads == 1 else tc.slice(k, 2, hd * dk, (hd + 1) * dk)
        scores = sp.attention_scores(qh, kh, dk)
        local = glob = None
        local_w = None
        if not cfg.no_agcn:
            local_w = fixed if cfg.no_astar else sp.graph_attention(graph, scores, cfg.graph_attention)
            local = sp.gcn_local(local_w, h, params[pre + "gcn.w0"], params[pre + "gcn.w1"])
        survivors = None
        if not cfg.no_sa:
            sparse, survivors = sp.top_u_sparsify(scores, cfg.effective_top_u)
            glob = sp.sparse_global(sparse, v)
        if diagnostics is not None:
            diagnostics.append(sp.AttentionState(
                scores.data, None if local_w is None else local_w.data, survivors))
        outs.append(sp.spatial_out(local, glob))
    if len(outs) == 1:
        return outs[0]
    total = outs[0]
    for o in outs[1:]:
        total = tc.add(total, o)
    return tc.scalar_mul(total, 1.0 / len(outs))


def _temporal(h: Tensor, params, cfg: ModelConfig, pre: str, training: bool, rng) -> Tensor:
    B, N, P, Df = h.shape
    c = tc.reshape(tc.transpose(h, (0, 1, 3, 2)), (B, N * Df, P))
    out = tp.shared_unique_forward(
        c, params, [o * Df for o in cfg.offsets], prefix=pre + "tmp.",
        use_forward=not cfg.no_fstcn, use_backward=not cfg.no_bstcn,
        dropout=cfg.dropout, training=training, rng=rng)
    return tc.transpose(tc.reshape(out, (B, N, Df, P)), (0, 1, 3, 2))


def forward(x, params: dict[str, Tensor], cfg: ModelConfig, graph: np.ndarray,
            training: bool = False, rng: np.random.Generator | None = None,
            diagnostics: list | None = None) -> Tensor:
    """Map normalized inputs ``B x P x N x F`` to predictions ``B x Q x N x F``.

    ``diagnostics``, when a list, receives one :class:`AttentionState` per
    layer and head.
    """
    x = tc.as_tensor(x)
    if x.ndim != 4 or x.shape[1:] != (cfg.P, cfg.n_nodes, cfg.features):
        raise ShapeError(
            f"input shape {x.shape} does not match B x {cfg.P} x {cfg.n_nodes} x {cfg.features}")
    graph = np.asarray(graph)
    if graph.shape != (cfg.n_nodes, cfg.n_nodes):
        raise ShapeError(f"graph is {graph.shape}, model expects {cfg.n_nodes} nodes")
    B = x.shape[0]
    try:
        h = sp.project(tc.transpose(x, (0, 2, 1, 3)), params["embed.w"], params["embed.b"])
    except NumericError as exc:
        raise NumericError(f"embedding: {exc}") from exc
    for layer in range(cfg.st_layers):
        pre = f"l{layer}."
        try:
            if cfg.stage_order == "spatial_first":
                out = _temporal(_spatial(h, params, cfg, pre, graph, diagnostics), params, cfg, pre, training, rng)
            else:
                out = _spatial(_temporal(h, params, cfg, pre, training, rng), params, cfg, pre, graph, diagnostics)
            h = tc.add(h, out)
        except NumericError as exc:
            raise NumericError(f"ST-layer {layer}: {exc}") from exc
    try:
        flat = tc.reshape(h, (B, cfg.n_nodes, cfg.P * cfg.d_f))
        hidden = tc.relu(sp.project(flat, params["head.w1"], params["head.b1"]))
        z = sp.project(hidden, params["head.w2"], params["head.b2"])
    except NumericError as exc:
        raise NumericError(f"head: {exc}") from exc
    return tc.transpose(tc.reshape(z, (B, cfg.n_nodes, cfg.Q, cfg.features)), (0, 2, 1, 3))


def predict(x: np.ndarray, params, cfg: ModelConfig, graph: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward over many samples without recording."""
    outs = []
    with tc.no_grad():
        for i in range(0, x.shape[0], batch_size):
            outs.append(forward(x[i:i + batch_size], params, cfg, graph).data)
    if not outs:
        return np.zeros((0, cfg.Q, cfg.n_nodes, cfg.features))
    return np.concatenate(outs, axis=0)


# ----------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    meta: dict[str, Any] = field(default_factory=dict)


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """``GSAB`` magic, u32 version, u64 header length, canonical JSON header, raw blobs.

    Blobs follow census order in the dtype named by the header
    (``<f8`` by default so round trips are bit-exact).
    """
    expected = param_shapes(ckpt.config)
    names = [n for n, _ in expected]
    if list(ckpt.params) != names:
        raise FormatError("parameter set does not match the census of the embedded config")
    dtype = np.dtype(ckpt.params[names[0]].data.dtype).newbyteorder("<")
    header = {
        "config": ckpt.config.to_dict(),
        "census": [[n, list(s)] for n, s in expected],
        "dtype": dtype.str,
        "meta": ckpt.meta,
    }
    hdr = _canonical(header)
    blobs = b"".join(np.ascontiguousarray(ckpt.params[n].data, dtype=dtype).tobytes() for n in names)
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(hdr)) + hdr + blobs)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a GSAB checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    if len(raw) < 16 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    cfg = ModelConfig.from_dict(header["config"])
    census = [(n, tuple(s)) for n, s in header["census"]]
    if census != param_shapes(cfg):
        raise FormatError(f"{path}: stored census disagrees with the embedded config")
    dtype = np.dtype(header["dtype"])
    body = raw[16 + hlen:]
    need = sum(int(np.prod(s)) for _, s in census) * dtype.itemsize
    if len(body) != need:
        raise FormatError(f"{path}: parameter payload has {len(body)} bytes, census needs {need}")
    params, pos = {}, 0
    for name, shape in census:
        n = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(body[pos:pos + n], dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        params[name] = Tensor(arr, requires_grad=True, name=name)
        pos += n
    return Checkpoint(params, cfg, header.get("meta", {}))


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {n: Tensor(t.data.copy(), requires_grad=True, name=n) for n, t in params.items()}
