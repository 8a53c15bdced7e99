"""Operator entry point: ``condlstmq <subcommand> --config cfg.json [--key value]``.

Options come from an optional JSON config file overridden by command-line
flags; ``CONDLSTMQ_SEED`` overrides the seed from either.  Unknown config
keys are rejected.  Exit codes: 0 success, 1 runtime/data error, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import data, evaluate, fanchart, synth
from .model import KIND_COND, KIND_PSEUDO, ModelConfig
from .train import (checkpoint_from_training, load_checkpoint, save_checkpoint,
                    save_train_report, split_train_val, train)

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


MODEL_KEYS = {
    "hidden_units": int, "learning_rate": float, "dropout_rate": float,
    "epochs": int, "history_len": int, "horizon": int, "batch_size": int,
    "condition_cell_state": bool, "sort_quantiles": bool, "clip_norm": float,
}

COMMAND_KEYS: dict[str, dict[str, type]] = {
    "synth": {
        "counties": int, "days": int, "n_cat": int, "causal_indices": list,
        "hole_rate": float, "base_rate": float, "start_date": str,
        "out": str, "truth_out": str,
    },
    "preprocess": {
        "panel": str, "nyt": str, "mobility": str, "demographics": str,
        "gdp": str, "census": str, "policy": str, "pi_mortality": str,
        "start_date": str, "end_date": str, "holdout_days": int,
        "demographic_features": list, "gdp_years": list,
        "census_features": list, "out": str, "report_out": str,
    },
    "train": {**MODEL_KEYS, "panel": str, "model": str, "holdout_days": int,
              "out": str, "report_out": str},
    "predict": {
        "checkpoint": str, "panel": str, "onset": str, "out": str,
        "clamp_zero": bool, "sort_quantiles": bool,
        "fanchart_county": str, "fanchart_out": str,
    },
    "evaluate": {"checkpoint": str, "panel": str, "onset": str, "out": str},
    "importance": {
        "checkpoint": str, "panel": str, "features": str, "repeats": int,
        "holdout_days": int, "out": str,
    },
    "sensitivity": {
        "checkpoint": str, "panel": str, "feature": str, "onset": str,
        "magnitude": float, "out": str,
    },
    "compare": {
        "checkpoint_a": str, "checkpoint_b": str, "panel": str, "onset": str,
        "min_deaths": float, "out": str,
    },
}

MODEL_ALIASES = {
    KIND_COND: KIND_COND,
    KIND_PSEUDO: KIND_PSEUDO,
    "cond": KIND_COND,
    "pseudo": KIND_PSEUDO,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condlstmq",
        description="County-level quantile death-toll forecasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        for key, typ in keys.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action=argparse.BooleanOptionalAction,
                               default=None)
            elif typ is list:
                p.add_argument(flag, type=str, default=None,
                               help="comma-separated list")
            else:
                p.add_argument(flag, type=typ, default=None)
    return parser


def _coerce_list(key: str, value) -> list:
    if isinstance(value, list):
        return value
    if isinstance(value, str):
        items = [v.strip() for v in value.split(",") if v.strip()]
        if key == "causal_indices":
            return [int(v) for v in items]
        return items
    raise UsageError(f"config key {key!r} must be a list or comma-separated string")


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags < CONDLSTMQ_SEED; reject unknowns."""
    allowed = COMMAND_KEYS[args.command]
    cfg: dict = {}
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as f:
                loaded = json.load(f)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        unknown = set(loaded) - set(allowed) - {"seed"}
        if unknown:
            raise UsageError(
                f"unknown config keys for {args.command}: {sorted(unknown)}"
            )
        cfg.update(loaded)
    for key in list(allowed) + ["seed"]:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    env_seed = os.environ.get("CONDLSTMQ_SEED")
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"CONDLSTMQ_SEED must be an integer, got {env_seed!r}")
    for key, typ in allowed.items():
        if key in cfg and typ is list:
            cfg[key] = _coerce_list(key, cfg[key])
    cfg.setdefault("seed", 0)
    return cfg


def _need(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: dict) -> int:
    _need(cfg, "counties", "days", "out")
    panel, truth = synth.synth_generate(
        n_counties=cfg["counties"],
        n_dates=cfg["days"],
        n_cat=cfg.get("n_cat", 10),
        seed=cfg["seed"],
        causal_indices=tuple(cfg.get("causal_indices", [0, 1, 2])),
        hole_rate=cfg.get("hole_rate", 0.1),
        base_rate=cfg.get("base_rate", 1.0),
        start_date=cfg.get("start_date", "2020-03-01"),
    )
    data.save_panel(panel, cfg["out"])
    if "truth_out" in cfg:
        truth.save(cfg["truth_out"])
    print(f"wrote synthetic panel ({panel.n_counties} counties x "
          f"{panel.n_dates} days) to {cfg['out']}")
    return 0


def cmd_preprocess(cfg: dict) -> int:
    _need(cfg, "out")
    holdout = cfg.get("holdout_days", 21)
    if "panel" in cfg:
        raw = data.load_panel(cfg["panel"])
        report = None
    else:
        _need(cfg, "nyt", "mobility", "demographics", "gdp", "census",
              "policy", "pi_mortality")
        nyt = data.load_nyt(cfg["nyt"])
        mobility = data.load_mobility(cfg["mobility"])
        start = cfg.get("start_date", "2020-03-01")
        seasonality = data.extract_seasonality(
            data.load_pi_mortality(cfg["pi_mortality"]))
        county_ids = sorted(nyt["deaths"].columns)
        categorical = data.load_categorical(
            cfg["demographics"], cfg["gdp"], cfg["census"], cfg["policy"],
            county_ids, nyt["state_of"], start,
            demographic_features=cfg.get("demographic_features"),
            gdp_years=cfg.get("gdp_years"),
            census_features=cfg.get("census_features"),
        )
        raw, report = data.assemble_panel(nyt, mobility, categorical,
                                          seasonality, start,
                                          cfg.get("end_date"))
    panel, report = data.preprocess_panel(raw, holdout_days=holdout,
                                          report=report)
    data.save_panel(panel, cfg["out"])
    if "report_out" in cfg:
        with open(cfg["report_out"], "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    print(f"wrote preprocessed panel to {cfg['out']} "
          f"(filled {report.same_day_filled} same-day, "
          f"{report.spline_filled} spline)")
    return 0


def _model_config_from(cfg: dict, panel: data.CountyPanel) -> ModelConfig:
    kw = {k: cfg[k] for k in MODEL_KEYS if k in cfg}
    kw["n_ts_features"] = len(panel.ts_feature_names)
    kw["n_cat_features"] = len(panel.cat_feature_names)
    kw["seed"] = cfg["seed"]
    return ModelConfig(**kw)


def cmd_train(cfg: dict) -> int:
    _need(cfg, "panel", "out")
    panel = data.load_panel(cfg["panel"])
    if panel.standardization_stats is None:
        raise ValueError("panel is not standardized; run `preprocess` first")
    kind = MODEL_ALIASES.get(cfg.get("model", KIND_COND))
    if kind is None:
        raise UsageError(
            f"unknown model {cfg.get('model')!r}; choose from "
            f"{sorted(MODEL_ALIASES)}"
        )
    config = _model_config_from(cfg, panel)
    holdout = cfg.get("holdout_days", config.history_len + config.horizon)
    train_samples, val_samples = split_train_val(
        panel, history=config.history_len, horizon=config.horizon,
        holdout_days=holdout)
    params, report = train(train_samples, val_samples, config, kind=kind,
                           seed=cfg["seed"])
    cut = panel.n_dates - holdout
    ckpt = checkpoint_from_training(
        params, config, panel.standardization_stats,
        (panel.dates[0], panel.dates[cut - 1]))
    save_checkpoint(cfg["out"], ckpt)
    if "report_out" in cfg:
        save_train_report(cfg["report_out"], report)
    if report.epochs:
        print(f"trained {kind} on {len(train_samples)} samples "
              f"({config.epochs} epochs); final val loss "
              f"{report.epochs[-1].val_loss:.6f}")
    else:
        print(f"initialized {kind} without training (0 epochs)")
    print(f"wrote checkpoint {ckpt.digest()} to {cfg['out']}")
    return 0


def cmd_predict(cfg: dict) -> int:
    _need(cfg, "checkpoint", "panel", "onset", "out")
    ckpt = load_checkpoint(cfg["checkpoint"])
    panel = data.load_panel(cfg["panel"])
    forecasts = evaluate.predict(
        ckpt, panel, cfg["onset"],
        clamp_zero=cfg.get("clamp_zero", True),
        sort_quantiles=cfg.get("sort_quantiles"),
    )
    evaluate.save_forecast_csv(forecasts, cfg["out"])
    print(f"wrote {len(forecasts)} county forecasts to {cfg['out']}")
    if "fanchart_county" in cfg or "fanchart_out" in cfg:
        _need(cfg, "fanchart_county", "fanchart_out")
        fanchart.emit_fan_chart(cfg["out"], cfg["fanchart_county"],
                                cfg["fanchart_out"])
        print(f"wrote fan chart to {cfg['fanchart_out']}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _need(cfg, "checkpoint", "panel", "onset", "out")
    ckpt = load_checkpoint(cfg["checkpoint"])
    panel = data.load_panel(cfg["panel"])
    report = evaluate.evaluate_checkpoint(ckpt, panel, cfg["onset"])
    report.save(cfg["out"])
    print(f"mean pinball {report.mean_pinball:.6f}; national RMSE "
          f"{report.national_rmse:.3f} vs zero control "
          f"{report.national_control_rmse:.3f}")
    return 0


def cmd_importance(cfg: dict) -> int:
    _need(cfg, "checkpoint", "panel", "out")
    ckpt = load_checkpoint(cfg["checkpoint"])
    panel = data.load_panel(cfg["panel"])
    spec = cfg.get("features", "all")
    if spec == "all":
        features = panel.cat_feature_names + panel.ts_feature_names
    elif spec == "all-categorical":
        features = list(panel.cat_feature_names)
    elif spec == "all-timeseries":
        features = list(panel.ts_feature_names)
    else:
        features = [f.strip() for f in spec.split(",") if f.strip()]
    report = evaluate.importance_report(
        ckpt, panel, features,
        repeats=cfg.get("repeats", 10),
        seed=cfg["seed"],
        holdout_days=cfg.get("holdout_days",
                             ckpt.config.history_len + ckpt.config.horizon),
    )
    report.save(cfg["out"])
    top = report.ranked()[0]
    print(f"most important of {len(features)}: {top.feature} "
          f"(delta {top.mean_delta:+.6f}, p {top.sign_test.p_value:.4f})")
    return 0


def cmd_sensitivity(cfg: dict) -> int:
    _need(cfg, "checkpoint", "panel", "feature", "onset", "out")
    ckpt = load_checkpoint(cfg["checkpoint"])
    panel = data.load_panel(cfg["panel"])
    result = evaluate.sensitivity(ckpt, panel, cfg["feature"], cfg["onset"],
                                  magnitude=cfg.get("magnitude", 3.0))
    result.save(cfg["out"])
    print(f"national total over horizon: baseline "
          f"{result.baseline.sum():.1f}, +{result.magnitude:g}sd "
          f"{result.increased.sum():.1f}, -{result.magnitude:g}sd "
          f"{result.decreased.sum():.1f}")
    return 0


def cmd_compare(cfg: dict) -> int:
    _need(cfg, "checkpoint_a", "checkpoint_b", "panel", "onset", "out")
    ckpt_a = load_checkpoint(cfg["checkpoint_a"])
    ckpt_b = load_checkpoint(cfg["checkpoint_b"])
    panel = data.load_panel(cfg["panel"])
    losses = []
    for ckpt in (ckpt_a, ckpt_b):
        raw = evaluate.predict(ckpt, panel, cfg["onset"], clamp_zero=False,
                               sort_quantiles=False)
        per_county, _ = evaluate.eval_pinball(raw, panel, ckpt)
        losses.append(per_county)
    result = evaluate.compare_models(
        losses[0], losses[1], evaluate.county_total_deaths(panel),
        min_deaths=cfg.get("min_deaths", 50.0))
    doc = result.to_dict()
    doc["checkpoint_a"] = ckpt_a.digest()
    doc["checkpoint_b"] = ckpt_b.digest()
    with open(cfg["out"], "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    mean_delta = float(np.mean(list(result.deltas.values())))
    print(f"compared {len(result.deltas)} counties: mean delta "
          f"{mean_delta:+.6f}, one-sided signed-rank p "
          f"{result.wilcoxon.p_value:.5f}")
    return 0


DISPATCH = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "sensitivity": cmd_sensitivity,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return DISPATCH[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/data errors -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:  # console script
    sys.exit(main())


if __name__ == "__main__":
    entry()
