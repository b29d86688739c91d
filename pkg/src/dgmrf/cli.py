"""Command-line front end: ``dgmrf {gen-toy,convert,train,infer,eval}``.

Settings are ``key=value`` pairs.  They come from defaults, then an optional
``--config FILE`` (same ``key=value`` lines, ``#`` comments allowed), then
command-line overrides, which may be written ``key=value`` or
``--key=value``.  Every run writes its resolved settings to
``config.txt`` next to its outputs.

On failure the exit status is non-zero and stderr carries one line
``error: <ErrorClass>: <message>``.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import data_io
from .errors import ConfigError, DgmrfError
from .grid import Dataset, crop_frame, pad_frame
from .metrics import score_report, write_report
from .model import init_model
from .posterior import InferConfig, summarize
from .vi import TrainConfig, load_checkpoint, save_checkpoint, train, write_loss_trace

DEFAULTS = {
    "gen-toy": {
        "out": "toy", "height": 160, "width": 120, "kappa2": 8.0 / 50.0 ** 2, "tau": 1.0,
        "gamma": 1, "seed": 0, "missing_fraction": 0.3, "holes": "", "edges": "",
    },
    "convert": {"csv": "", "height": 0, "width": 0, "out": "converted"},
    "train": {
        "data": "", "covariates": "", "out": "run", "filter": "plus", "layers": 1, "radius": 1,
        "channels": 1, "nonlinear": False, "iterations": 10_000, "n_q": 10, "lr": 0.01,
        "sigma": 1e-3, "train_sigma": False, "train_bias": True, "frame": 10,
        "normalize": False, "trend": False, "seed": 0, "checkpoint_every": 0,
    },
    "infer": {
        "checkpoint": "", "data": "", "covariates": "", "out": "summary", "cg_tol": 1e-7,
        "cg_max_iter": 0, "variance": "auto", "n_samples": 100, "seed": 0,
        "preconditioner": "none",
    },
    "eval": {"test": "", "pred": "", "out": "scores.csv", "model": "dgmrf", "alpha": 0.05},
}


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}")
    return raw


def _parse_pairs(pairs, defaults, origin):
    out = {}
    for no, item in enumerate(pairs, 1):
        item = item.strip()
        if not item or item.startswith("#"):
            continue
        key, sep, raw = item.lstrip("-").partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{origin} entry {no}: expected key=value, got {item!r}")
        if key not in defaults:
            raise ConfigError(f"{origin}: unknown setting {key!r}")
        out[key] = _coerce(key, raw.strip(), defaults[key])
    return out


def resolve_config(command, config_path=None, overrides=()):
    """Defaults < config file < command-line overrides."""
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    if config_path:
        with open(config_path) as fh:
            cfg.update(_parse_pairs(fh.read().splitlines(), defaults, config_path))
    cfg.update(_parse_pairs(overrides, defaults, "command line"))
    return cfg


def _fmt_value(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(path, cfg):
    with open(path, "w") as fh:
        for key in sorted(cfg):
            fh.write(f"{key}={_fmt_value(cfg[key])}\n")


def read_kv(path):
    out = {}
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                key, sep, val = line.rstrip("\n").partition("=")
                if sep:
                    out[key] = val
    return out


def _require(cfg, *keys):
    for key in keys:
        if not cfg[key]:
            raise ConfigError(f"setting {key!r} is required")


def _load_data(cfg):
    F = None
    if cfg.get("covariates"):
        F = data_io.covariates_from_grid(data_io.load_array(cfg["covariates"]))
    return data_io.load_grid(cfg["data"], F)


# ----------------------------------------------------------------------------
# commands


def cmd_gen_toy(cfg):
    toy = data_io.ToyConfig(
        height=cfg["height"], width=cfg["width"], kappa2=cfg["kappa2"], tau=cfg["tau"],
        gamma=cfg["gamma"], seed=cfg["seed"], edges=data_io.parse_edges(cfg["edges"]),
        missing_fraction=cfg["missing_fraction"], holes=data_io.parse_holes(cfg["holes"]))
    truth, obs = data_io.make_toy(toy)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    data_io.save_grid(os.path.join(out, "truth.grid"), truth)
    data_io.save_grid(os.path.join(out, "obs.grid"), truth, obs.mask)
    data_io.save_grid(os.path.join(out, "test.grid"), truth, ~obs.mask)
    write_config(os.path.join(out, "config.txt"), cfg)


def cmd_convert(cfg):
    _require(cfg, "csv", "height", "width")
    grid, cov = data_io.convert_csv(cfg["csv"], cfg["height"], cfg["width"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    data_io.save_grid(os.path.join(out, "obs.grid"), grid)
    data_io.save_grid(os.path.join(out, "covariates.grid"), cov)
    write_config(os.path.join(out, "config.txt"), cfg)


def cmd_train(cfg):
    _require(cfg, "data")
    if cfg["trend"] and not cfg["covariates"]:
        raise ConfigError("trend=1 needs a covariates grid")
    data = _load_data(cfg if cfg["trend"] else {**cfg, "covariates": ""})
    if data.shape[2] != cfg["channels"]:
        raise ConfigError(f"data has {data.shape[2]} channels but channels={cfg['channels']}")
    scale = data_io.normalization_scale(data) if cfg["normalize"] else 1.0
    padded = pad_frame(data_io.scale_dataset(data, scale), cfg["frame"])
    model = init_model(
        filter=cfg["filter"], n_layers=cfg["layers"], radius=cfg["radius"], channels=cfg["channels"],
        nonlinear=cfg["nonlinear"], sigma=cfg["sigma"], train_sigma=cfg["train_sigma"],
        train_bias=cfg["train_bias"], seed=cfg["seed"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_config(os.path.join(out, "config.txt"), cfg)
    meta = {"frame": cfg["frame"], "scale": repr(float(scale)), "trend": int(cfg["trend"]),
            "train_seed": cfg["seed"], "height": padded.shape[0], "width": padded.shape[1]}

    def on_checkpoint(it, m, q, loss):
        save_checkpoint(os.path.join(out, "checkpoint_latest.txt"), m, q, {**meta, "iteration": it})

    tc = TrainConfig(iterations=cfg["iterations"], n_q=cfg["n_q"], lr=cfg["lr"], seed=cfg["seed"],
                     checkpoint_every=cfg["checkpoint_every"])
    result = train(model, padded, tc, callback=on_checkpoint)
    meta.update(best_iteration=result.best_iteration, best_loss=repr(float(result.best_loss)))
    save_checkpoint(os.path.join(out, "checkpoint.txt"), result.model, result.variational, meta)
    write_loss_trace(os.path.join(out, "loss.csv"), result.losses)
    return result


def cmd_infer(cfg):
    _require(cfg, "checkpoint", "data")
    model, q, meta = load_checkpoint(cfg["checkpoint"])
    frame, scale = int(meta.get("frame", 0)), float(meta.get("scale", 1.0))
    trend = bool(int(meta.get("trend", 0)))
    if trend and not cfg["covariates"]:
        raise ConfigError("checkpoint uses a trend; pass covariates=")
    data = _load_data(cfg if trend else {**cfg, "covariates": ""})
    padded = pad_frame(data_io.scale_dataset(data, scale), frame)
    if padded.shape[:2] != (int(meta.get("height", padded.shape[0])), int(meta.get("width", padded.shape[1]))):
        raise ConfigError("data grid does not match the checkpoint")
    ic = InferConfig(cg_tol=cfg["cg_tol"], cg_max_iter=cfg["cg_max_iter"] or None,
                     variance=cfg["variance"], n_samples=cfg["n_samples"], seed=cfg["seed"],
                     preconditioner=cfg["preconditioner"])
    summary = summarize(model, q, padded, ic)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_config(os.path.join(out, "config.txt"), cfg)
    for name in ("mean", "marginal_sd", "predictive_sd"):
        grid = crop_frame(getattr(summary, name), frame) * scale
        data_io.save_grid(os.path.join(out, f"{name}.grid"), grid)
    tags = dict(summary.tags, frame=str(frame), scale=repr(scale), train_seed=meta.get("train_seed", ""))
    if summary.beta_mean is not None:
        with open(os.path.join(out, "beta.txt"), "w") as fh:
            fh.write("index,mean,sd\n")
            for i, (m, s) in enumerate(zip(summary.beta_mean * scale, summary.beta_sd * scale)):
                fh.write(f"{i},{float(m)!r},{float(s)!r}\n")
    with open(os.path.join(out, "meta.txt"), "w") as fh:
        for key in sorted(tags):
            fh.write(f"{key}={tags[key]}\n")
    return summary


def cmd_eval(cfg):
    _require(cfg, "test", "pred")
    test = data_io.load_grid(cfg["test"])
    rows = []
    for idx, pred_dir in enumerate(p for p in cfg["pred"].split(",") if p):
        mean = data_io.load_array(os.path.join(pred_dir, "mean.grid"))
        sd = data_io.load_array(os.path.join(pred_dir, "predictive_sd.grid"))
        if mean.shape != test.shape or sd.shape != test.shape:
            raise ConfigError(f"prediction grids in {pred_dir} do not match the test grid")
        seed = read_kv(os.path.join(pred_dir, "meta.txt")).get("train_seed") or str(idx)
        rows.append((cfg["model"], seed, score_report(test.y, mean, sd, test.mask, cfg["alpha"])))
    out = cfg["out"]
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    write_report(out, rows)
    write_config(os.path.splitext(out)[0] + ".config.txt", cfg)
    return rows


COMMANDS = {"gen-toy": cmd_gen_toy, "convert": cmd_convert, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval}


def build_parser():
    parser = argparse.ArgumentParser(prog="dgmrf", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        keys = ", ".join(f"{k}={_fmt_value(v)}" for k, v in sorted(DEFAULTS[name].items()))
        p = sub.add_parser(name, help=f"{name} (settings: {', '.join(sorted(DEFAULTS[name]))})",
                           description=f"settings and defaults: {keys}")
        p.add_argument("--config", help="file of key=value lines")
        p.add_argument("settings", nargs="*", help="key=value overrides")
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, list(args.settings) + extra)
        COMMANDS[args.command](cfg)
    except DgmrfError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
