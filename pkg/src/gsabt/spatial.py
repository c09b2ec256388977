"""Graph sparse attention: graph-masked GCN for local and Top-U attention for global features.

Node features are ``B x N x ...`` tensors. Attention matrices are
``B x N x N``; propagation through them acts on the node axis and treats
every trailing axis as feature axes, so the same operators serve plain
``B x N x D`` embeddings and time-resolved ``B x N x P x D`` features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class AttentionState:
    scores: np.ndarray           # A_M, B x N x N
    local_weights: np.ndarray    # G_A
    survivors: np.ndarray | None  # boolean S_M mask, None when the sparse branch is off


def project(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    out = tc.matmul(x, w)
    return out if b is None else tc.add(out, b)


def project_qkv(x: Tensor, params: dict[str, Tensor], prefix: str = "") -> tuple[Tensor, Tensor, Tensor]:
    """Affine Q/K/V maps applied per node."""
    return tuple(project(x, params[f"{prefix}w_{k}"], params[f"{prefix}b_{k}"]) for k in "qkv")


def attention_scores(q: Tensor, k: Tensor, d_h: int) -> Tensor:
    """Scaled dot products ``Q K^T / sqrt(d_h)``."""
    if q.shape != k.shape:
        raise ShapeError(f"Q {q.shape} and K {k.shape} must match")
    return tc.scalar_mul(tc.matmul(q, tc.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d_h))


def graph_attention(graph: np.ndarray, scores: Tensor, variant: str = "masked_softmax") -> Tensor:
    """Row weights over graph neighbours.

    ``masked_softmax`` sends off-graph scores to ``-inf`` before the softmax,
    so each row renormalizes over its neighbours only. ``literal_product``
    multiplies scores by the 0/1 graph and softmaxes the full row.
    """
    mask = np.asarray(graph) > 0
    if variant == "masked_softmax":
        return tc.softmax_rows(tc.masked_fill_neginf(scores, mask))
    if variant == "literal_product":
        return tc.softmax_rows(tc.mul(scores, Tensor(mask.astype(np.float64))))
    raise ConfigError(f"unknown graph attention variant {variant!r}")


def fixed_graph_weights(graph: np.ndarray, batch: int) -> Tensor:
    """Row-normalized graph, broadcast over the batch (no attention)."""
    g = np.asarray(graph, dtype=np.float64)
    w = g / g.sum(axis=1, keepdims=True)
    return Tensor(np.broadcast_to(w, (batch,) + w.shape).copy())


def propagate(weights: Tensor, x: Tensor) -> Tensor:
    """Apply ``B x N x N`` weights along the node axis of ``B x N x ...``."""
    if x.ndim == 3:
        return tc.matmul(weights, x)
    flat = tc.reshape(x, (x.shape[0], x.shape[1], -1))
    return tc.reshape(tc.matmul(weights, flat), x.shape)


def gcn_local(weights: Tensor, x: Tensor, w0: Tensor, w1: Tensor) -> Tensor:
    """Two-layer GCN ``ReLU(G ReLU(G X W0) W1)``."""
    h = tc.relu(propagate(weights, tc.matmul(x, w0)))
    return tc.relu(propagate(weights, tc.matmul(h, w1)))


def top_u_mask(scores: np.ndarray, u: int) -> np.ndarray:
    """Boolean mask of the ``min(u, N)`` largest entries per row.

    Ties go to the lowest column index (stable sort on negated scores).
    """
    if u < 1:
        raise ConfigError(f"Top-U needs U >= 1, got {u}")
    n = scores.shape[-1]
    if u >= n:
        return np.ones(scores.shape, dtype=bool)
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :u]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def top_u_sparsify(scores: Tensor, u: int) -> tuple[Tensor, np.ndarray]:
    """Keep the Top-U scores of each row, ``-inf`` elsewhere.

    The selection is a constant index set for differentiation.
    """
    mask = top_u_mask(scores.data, u)
    tc._log_kink(mask)
    return tc.masked_fill_neginf(scores, mask), mask


def sparse_global(sparse_scores: Tensor, v: Tensor) -> Tensor:
    return propagate(tc.softmax_rows(sparse_scores), v)


def spatial_out(local: Tensor | None, global_: Tensor | None) -> Tensor:
    if local is None and global_ is None:
        raise ConfigError("spatial block needs at least one of the local or global branches")
    if local is None:
        return global_
    if global_ is None:
        return local
    return tc.add(local, global_)


def u_th_largest(scores: np.ndarray, u: int) -> np.ndarray:
    """Per-row threshold: the u-th largest value (1-based)."""
    n = scores.shape[-1]
    return -np.sort(-scores, axis=-1)[..., min(u, n) - 1]


def survivor_census(survivors: np.ndarray, offsets: list[int]) -> np.ndarray:
    """Counts ``[target m, source m']`` of Top-U survivors.

    Rows are query (target) nodes, columns key (source) nodes.
    """
    n = survivors.shape[-1]
    bounds = list(zip(offsets, offsets[1:] + [n]))
    counts = np.zeros((len(bounds), len(bounds)), dtype=np.int64)
    rows = survivors.reshape(-1, n, n)
    for i, (rlo, rhi) in enumerate(bounds):
        for j, (clo, chi) in enumerate(bounds):
            counts[i, j] = int(rows[:, rlo:rhi, clo:chi].sum())
    return counts
