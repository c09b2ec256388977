"""Run configuration: JSON file + ``KEY=VALUE`` overrides, strict key checking."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "data": {
        "manifest": None,
        "modalities": None,
        "split": {"mode": "weeks", "weeks": [9, 2, 2], "fractions": [0.7, 0.15, 0.15],
                  "steps_per_day": 48},
        "normalization": "minmax",
    },
    "synth": {
        "modalities": [
            {"name": "taxi", "node_count": 24, "scale": 400.0, "coupling": 1.0},
            {"name": "bike", "node_count": 16, "scale": 12.0, "coupling": 1.0},
        ],
        "days": 91,
        "features": ["pickup", "dropoff"],
        "base": 1.0,
        "a1": 0.6,
        "a2": 0.3,
        "noise": 0.05,
        "latent_std": 0.15,
        "latent_ar": 0.95,
        "steps_per_day": 48,
        "seed": 0,
    },
    "model": {
        "P": 12,
        "Q": 12,
        "d_h": 64,
        "d_f": None,
        "st_layers": 2,
        "top_u": 16,
        "dropout": 0.1,
        "heads": 1,
        "head_hidden": None,
        "no_sa": False,
        "no_agcn": False,
        "no_astar": False,
        "no_fstcn": False,
        "no_bstcn": False,
        "graph_attention": "masked_softmax",
        "stage_order": "spatial_first",
        "seed": 0,
    },
    "train": {
        "batch_size": 64,
        "epochs": 100,
        "learning_rate": 5e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "optimizer": "adam",
        "clip_norm": 5.0,
        "patience": None,
        "seed": 0,
    },
    "eval": {"split": "test"},
    "sweep": {"param": "st_layers", "values": None},
    "gradcheck": {"h": 1e-5, "tol": 1e-4, "seed": 0},
    "census": {"split": "test"},
}

# keys whose values are free-form lists/dicts and are not checked recursively
_OPAQUE = {("synth", "modalities"), ("data", "modalities"), ("synth", "features"),
           ("sweep", "values"), ("data", "split", "weeks"), ("data", "split", "fractions")}


def _check_keys(user: dict, ref: dict, path: tuple = ()) -> None:
    if not isinstance(user, dict):
        raise ConfigError(f"config section {'.'.join(path) or '<root>'} must be an object")
    for key, val in user.items():
        here = path + (key,)
        if key not in ref:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(ref[key], dict) and here not in _OPAQUE:
            _check_keys(val, ref[key], here)


def merge(base: dict, user: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node, ref = cfg, DEFAULTS
    for p in parts[:-1]:
        if p not in ref or not isinstance(ref[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node, ref = node.setdefault(p, {}), ref[p]
    if parts[-1] not in ref:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = parse_value(raw)


def load_config(path: str | None, overrides: list[str] | None = None, seed: int | None = None) -> dict:
    """Resolve defaults <- file <- overrides <- --seed.

    A run manifest is accepted in place of a config file; its resolved
    config is used verbatim.
    """
    user: dict = {}
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        user = doc.get("resolved_config", doc) if isinstance(doc, dict) else doc
    _check_keys(user, DEFAULTS)
    cfg = merge(DEFAULTS, user)
    for item in overrides or []:
        apply_override(cfg, item)
    if seed is not None:
        for section in ("model", "train", "synth", "gradcheck"):
            cfg[section]["seed"] = int(seed)
    _check_keys(cfg, DEFAULTS)
    return cfg


def describe_keys(ref: dict | None = None, prefix: str = "") -> list[str]:
    """``key = default`` lines for every config key (used in --help)."""
    ref = DEFAULTS if ref is None else ref
    lines = []
    for key, val in ref.items():
        full = f"{prefix}{key}"
        if isinstance(val, dict) and tuple(full.split(".")) not in _OPAQUE:
            lines += describe_keys(val, full + ".")
        else:
            lines.append(f"  {full} = {json.dumps(val)}")
    return lines


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"
