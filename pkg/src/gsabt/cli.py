"""``gsabt`` command line: generate, train, eval, ablate, sweep, gradcheck, census.

Exit codes: 0 ok, 1 runtime failure, 2 usage/config/input error,
3 numeric failure, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .config import canonical, describe_keys, load_config
from .data import (Normalizer, SynthConfig, SynthModality, fraction_splits, grid_adjacency, grid_shape,
                   synth_generate, week_splits)
from .errors import (ConfigError, FormatError, GsabtError, InsufficientDataError, NumericError,
                     ValidationError)
from .experiments import (REFERENCE_OPTIMA, ablation_ordering, attention_census, block_summary,
                          model_config_for, model_gradcheck, op_gradchecks, prepare, run_ablation_suite,
                          run_sweep, train_and_evaluate, write_table)
from .fileio import file_digest, load_modalities, read_manifest, save_graph, save_series, write_manifest
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, write_history

log = logging.getLogger("gsabt")

EXIT_RUNTIME, EXIT_USAGE, EXIT_NUMERIC, EXIT_GRADCHECK = 1, 2, 3, 4


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _prepared(cfg: dict):
    manifest = cfg["data"]["manifest"]
    if not manifest:
        raise ConfigError("data.manifest is required (path to a modality manifest)")
    if not Path(manifest).exists():
        raise ConfigError(f"modality manifest {manifest} not found")
    specs, series = load_modalities(manifest, cfg["data"]["modalities"])
    T = next(iter(series.values())).shape[0]
    split = cfg["data"]["split"]
    if split["mode"] == "weeks":
        bounds = week_splits(T, split["weeks"], split["steps_per_day"])
    elif split["mode"] == "fractions":
        bounds = fraction_splits(T, split["fractions"])
    else:
        raise ConfigError(f"data.split.mode must be weeks or fractions, got {split['mode']!r}")
    m = cfg["model"]
    prep = prepare(specs, series, m["P"], m["Q"], bounds, cfg["data"]["normalization"])
    inputs = {}
    for e in read_manifest(manifest):
        if e["name"] in prep.names:
            inputs[e["series"]] = file_digest(e["series"])
            inputs[e["graph"]] = file_digest(e["graph"])
    inputs[str(manifest)] = file_digest(manifest)
    return prep, inputs


def _model_cfg(cfg: dict, prep) -> ModelConfig:
    return model_config_for(prep, **cfg["model"])


def _write_run_manifest(out: Path, command: str, cfg: dict, args: dict, inputs: dict,
                        outputs: list[str], t0: float) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "args": args,
        "seed": cfg["model"]["seed"],
        "resolved_config": cfg,
        "inputs": inputs,
        "outputs": {name: file_digest(out / name) for name in outputs},
        "timings_ms": {"total": int(round((time.perf_counter() - t0) * 1000))},
    }
    (out / "run_manifest.json").write_text(canonical(doc), encoding="utf-8")


def _checkpoint_arg(args, cfg_doc_args: dict) -> str:
    path = args.checkpoint or cfg_doc_args.get("checkpoint")
    if not path:
        raise UsageError("--checkpoint is required")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} not found")
    return path


# ----------------------------------------------------------------- commands

def cmd_generate(cfg: dict, args, out: Path, extra: dict) -> int:
    s = cfg["synth"]
    mods = [SynthModality(m["name"], int(m["node_count"]), float(m.get("scale", 1.0)),
                          float(m.get("coupling", 1.0))) for m in s["modalities"]]
    if not mods:
        raise ConfigError("synth.modalities is empty")
    sc = SynthConfig(mods, days=int(s["days"]), features=len(s["features"]), base=s["base"], a1=s["a1"],
                     a2=s["a2"], noise=s["noise"], latent_std=s["latent_std"], latent_ar=s["latent_ar"],
                     steps_per_day=int(s["steps_per_day"]), seed=int(s["seed"]))
    series = synth_generate(sc)
    entries, outputs = [], []
    for m in mods:
        rows, cols = grid_shape(m.node_count)
        save_series(series[m.name], out / f"{m.name}.gstd")
        save_graph(grid_adjacency(rows, cols), out / f"{m.name}.gadj")
        entries.append({"name": m.name, "node_count": m.node_count, "features": list(s["features"]),
                        "series": f"{m.name}.gstd", "graph": f"{m.name}.gadj"})
        outputs += [f"{m.name}.gstd", f"{m.name}.gadj"]
    write_manifest(entries, out / "modalities.json")
    outputs.append("modalities.json")
    log.info("wrote %d modalities, T=%d steps", len(mods), sc.days * sc.steps_per_day)
    return _finish(out, "generate", cfg, extra, {}, outputs)


def cmd_train(cfg: dict, args, out: Path, extra: dict) -> int:
    prep, inputs = _prepared(cfg)
    mcfg = _model_cfg(cfg, prep)
    tcfg = TrainConfig.from_dict(cfg["train"])
    ckpt, history, report = train_and_evaluate(mcfg, prep, tcfg, cfg["eval"]["split"], log=log.info)
    ckpt.meta["eval_split"] = cfg["eval"]["split"]
    ckpt.meta["eval_overall_mae"] = report["overall"].mae
    save_checkpoint(ckpt, out / "checkpoint.gsab")
    write_history(history, out / "history.csv")
    report.write_csv(out / "report.csv")
    return _finish(out, "train", cfg, extra, inputs, ["checkpoint.gsab", "history.csv", "report.csv"])


def cmd_eval(cfg: dict, args, out: Path, extra: dict) -> int:
    path = _checkpoint_arg(args, extra)
    extra["checkpoint"] = path
    ckpt = load_checkpoint(path)
    if cfg["data"]["modalities"] is None:
        cfg["data"]["modalities"] = list(ckpt.config.modality_names)
    cfg["model"]["P"], cfg["model"]["Q"] = ckpt.config.P, ckpt.config.Q
    prep, inputs = _prepared(cfg)
    if prep.names != ckpt.config.modality_names or prep.node_counts != ckpt.config.node_counts:
        raise ConfigError(f"checkpoint modalities {ckpt.config.modality_names}/{ckpt.config.node_counts} "
                          f"do not match data {prep.names}/{prep.node_counts}")
    norm = Normalizer.from_state(ckpt.meta["normalizer"]) if "normalizer" in ckpt.meta else prep.normalizer
    report = evaluate(ckpt, prep.dataset, cfg["eval"]["split"], prep.graph, norm, prep.names)
    report.write_csv(out / "report.csv")
    inputs[path] = file_digest(path)
    return _finish(out, "eval", cfg, extra, inputs, ["report.csv"])


def cmd_ablate(cfg: dict, args, out: Path, extra: dict) -> int:
    prep, inputs = _prepared(cfg)
    rows = run_ablation_suite(_model_cfg(cfg, prep), prep, TrainConfig.from_dict(cfg["train"]),
                              cfg["eval"]["split"], log=log.info)
    write_table(out / "ablation.csv", "variant", rows, prep.names)
    (out / "ablation_ordering.txt").write_text("\n".join(ablation_ordering(rows, prep.names)) + "\n")
    return _finish(out, "ablate", cfg, extra, inputs, ["ablation.csv", "ablation_ordering.txt"])


def cmd_sweep(cfg: dict, args, out: Path, extra: dict) -> int:
    if args.param:
        cfg["sweep"]["param"] = args.param
    param = cfg["sweep"]["param"]
    prep, inputs = _prepared(cfg)
    rows = run_sweep(param, _model_cfg(cfg, prep), prep, TrainConfig.from_dict(cfg["train"]),
                     cfg["sweep"]["values"], cfg["eval"]["split"], log=log.info)
    best = str(REFERENCE_OPTIMA[param])
    name = f"sweep_{param}.csv"
    write_table(out / name, param, rows, prep.names,
                extra={"reference_optimum": ["yes" if label == best else "" for label, _ in rows]})
    return _finish(out, "sweep", cfg, extra, inputs, [name])


def cmd_gradcheck(cfg: dict, args, out: Path, extra: dict) -> int:
    g = cfg["gradcheck"]
    lines = []
    ok = True
    for name, rep in op_gradchecks(seed=int(g["seed"]), h=float(g["h"])).items():
        ok &= rep.passed
        lines.append(f"op {name}: max_rel_err={rep.max_rel_err:.3e} tol={rep.tol:.1e} "
                     f"{'PASS' if rep.passed else 'FAIL'}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = model_gradcheck(h=float(g["h"]), tol=float(g["tol"]), seed=int(g["seed"]))
    ok &= rep.passed
    for blk, err in block_summary(rep).items():
        lines.append(f"block {blk}: max_rel_err={err:.3e}")
    text = "\n".join(lines) + "\n\n" + rep.to_text()
    (out / "gradcheck.txt").write_text(text)
    sys.stdout.write(text)
    code = _finish(out, "gradcheck", cfg, extra, {}, ["gradcheck.txt"])
    return code if ok else EXIT_GRADCHECK


def cmd_census(cfg: dict, args, out: Path, extra: dict) -> int:
    path = _checkpoint_arg(args, extra)
    extra["checkpoint"] = path
    ckpt = load_checkpoint(path)
    if cfg["data"]["modalities"] is None:
        cfg["data"]["modalities"] = list(ckpt.config.modality_names)
    cfg["model"]["P"], cfg["model"]["Q"] = ckpt.config.P, ckpt.config.Q
    prep, inputs = _prepared(cfg)
    if prep.names != ckpt.config.modality_names:
        raise ConfigError(f"checkpoint modalities {ckpt.config.modality_names} do not match data {prep.names}")
    census = attention_census(ckpt, prep.dataset, cfg["census"]["split"], prep.graph)
    census.write_csv(out / "census.csv")
    inputs[path] = file_digest(path)
    return _finish(out, "census", cfg, extra, inputs, ["census.csv"])


def _finish(out: Path, command: str, cfg: dict, extra: dict, inputs: dict, outputs: list[str]) -> int:
    _write_run_manifest(out, command, cfg, extra, inputs, outputs, extra.pop("_t0"))
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write synthetic GSTD series, GADJ graphs and a modality manifest"),
    "train": (cmd_train, "train GSABT, write checkpoint, history.csv and report.csv"),
    "eval": (cmd_eval, "evaluate a checkpoint on a split, write report.csv"),
    "ablate": (cmd_ablate, "train/evaluate the six ablation variants, write ablation.csv"),
    "sweep": (cmd_sweep, "sweep st_layers or top_u, write sweep_<param>.csv"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of ops and the micro-instance model"),
    "census": (cmd_census, "count Top-U survivors per (target, source) modality, write census.csv"),
}


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (file values, then --override KEY=VALUE):\n" + "\n".join(describe_keys())
    parser = argparse.ArgumentParser(prog="gsabt", description="Multimodal GSABT traffic forecasting",
                                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file or a run_manifest.json to replay")
        p.add_argument("--seed", type=int, help="seed for model, training, synthetic data and gradcheck")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, value parsed as JSON (repeatable)")
        p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
        if name in ("eval", "census"):
            p.add_argument("--checkpoint", help="checkpoint written by train")
        if name == "sweep":
            p.add_argument("--param", choices=["st_layers", "top_u"], help="parameter to sweep")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        if args.command == "generate" and (not args.config or not Path(args.config).exists()):
            raise UsageError(f"generate needs an existing --config file (got {args.config!r})")
        cfg = load_config(args.config, args.override, args.seed)
        replay_args = {}
        if args.config:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if isinstance(doc, dict) and "resolved_config" in doc:
                replay_args = dict(doc.get("args", {}))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        replay_args["_t0"] = time.perf_counter()
        return COMMANDS[args.command][0](cfg, args, out, replay_args)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"gsabt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FormatError, ValidationError, InsufficientDataError) as exc:
        print(f"gsabt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"gsabt {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GsabtError, OSError) as exc:
        print(f"gsabt {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
