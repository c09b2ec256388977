"""Stacked dilated causal TCNs, their bidirectional sum, and the shared/unique arrangement.

Inputs are ``B x C x P``: channels first, time last. Parameter dicts use
``{prefix}{direction}.{layer}.w`` / ``.b`` keys, direction ``fwd`` or ``bwd``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as tc
from .errors import ConfigError, ShapeError
from .tensor import Tensor

DILATIONS = (1, 2, 4, 4)
KERNEL_SIZE = 2


def receptive_field(kernel_size: int = KERNEL_SIZE, dilations: Sequence[int] = DILATIONS) -> int:
    return 1 + (kernel_size - 1) * sum(dilations)


def stcn_keys(prefix: str, direction: str) -> list[tuple[str, str]]:
    return [(f"{prefix}{direction}.{i}.w", f"{prefix}{direction}.{i}.b") for i in range(len(DILATIONS))]


def stcn_forward(x: Tensor, params: dict[str, Tensor], prefix: str, direction: str = "fwd",
                 dropout: float = 0.0, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Four (causal dilated conv -> ReLU -> dropout) layers, dilations 1, 2, 4, 4."""
    h = x
    for (wk, bk), d in zip(stcn_keys(prefix, direction), DILATIONS):
        w = params[wk]
        if w.shape[1] != h.shape[1]:
            raise ShapeError(f"{wk} expects {w.shape[1]} input channels, got {h.shape[1]}")
        h = tc.conv1d_dilated(h, w, params[bk], dilation=d, causal_pad=True)
        h = tc.dropout(tc.relu(h), dropout, training, rng)
    return h


def bitcn_forward(x: Tensor, params: dict[str, Tensor], prefix: str, *, use_forward: bool = True,
                  use_backward: bool = True, dropout: float = 0.0, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Forward STCN plus the time-flipped backward STCN."""
    if not (use_forward or use_backward):
        raise ConfigError("a BiTCN needs at least one direction")
    out = None
    if use_forward:
        out = stcn_forward(x, params, prefix, "fwd", dropout, training, rng)
    if use_backward:
        back = tc.flip(stcn_forward(tc.flip(x, 2), params, prefix, "bwd", dropout, training, rng), 2)
        out = back if out is None else tc.add(out, back)
    return out


def check_partition(channel_offsets: Sequence[int], channels: int) -> list[tuple[int, int]]:
    offs = list(channel_offsets)
    if not offs or offs[0] != 0 or any(b <= a for a, b in zip(offs, offs[1:])) or offs[-1] >= channels:
        raise ConfigError(f"channel offsets {offs} do not partition {channels} channels")
    return list(zip(offs, offs[1:] + [channels]))


def shared_unique_forward(x: Tensor, params: dict[str, Tensor], channel_offsets: Sequence[int],
                          prefix: str = "", **kw) -> Tensor:
    """Shared BiTCN over all channels, then one BiTCN per modality slice.

    The per-modality outputs are concatenated back along the channel axis
    in modality order.
    """
    bounds = check_partition(channel_offsets, x.shape[1])
    h = bitcn_forward(x, params, f"{prefix}shared.", **kw)
    parts = [
        bitcn_forward(tc.slice(h, 1, lo, hi), params, f"{prefix}unique{m}.", **kw)
        for m, (lo, hi) in enumerate(bounds)
    ]
    return parts[0] if len(parts) == 1 else tc.concat(parts, axis=1)
