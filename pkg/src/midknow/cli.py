"""Command-line entry point: ``midknow <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

from .accidents_model import AccidentConstants, AccidentsConfig
from .config import ConfigError, load_config_file
from .determinism import Rng, derive_seed
from .harness import (
    DEFAULT_REPLICATIONS,
    CampaignConfig,
    ResultTable,
    accidents_paired_table,
    replicate_all,
    run_observational_accidents,
    run_paired_accidents,
    run_paired_shock,
    run_unpaired_shock,
    shock_paired_table,
    shock_unpaired_table,
    write_campaigns,
)
from .shock_model import ShockConfig
from .stats import (
    DEFAULT_PERMUTATIONS,
    median_diff_test,
    paired_coefficient,
    paired_median_test,
    paired_t_test,
)

MODEL_KEYS = {
    "shock": {f.name for f in fields(ShockConfig)},
    "accidents": ({f.name for f in fields(AccidentsConfig)} - {"constants"})
    | {f.name for f in fields(AccidentConstants)},
}


def split_config(raw: dict[str, str]) -> dict[str, dict[str, str]]:
    """Route config keys to models.

    ``shock.x`` / ``accidents.x`` target one model; an unprefixed key goes to
    every model that defines it.
    """
    out: dict[str, dict[str, str]] = {m: {} for m in MODEL_KEYS}
    for key, value in raw.items():
        model, dot, name = key.partition(".")
        if dot and model in MODEL_KEYS:
            if name not in MODEL_KEYS[model]:
                raise ConfigError(f"unknown {model} config key {name!r}")
            out[model][name] = value
            continue
        owners = [m for m, keys in MODEL_KEYS.items() if key in keys]
        if not owners:
            raise ConfigError(f"unknown config key {key!r}")
        for m in owners:
            out[m][key] = value
    return out


def _model_configs(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    if args.config is None:
        return {m: {} for m in MODEL_KEYS}
    return split_config(load_config_file(args.config))


def _campaign(args, model, design, cfg, **kw) -> CampaignConfig:
    reps = args.replications or DEFAULT_REPLICATIONS[f"{model}-{design}"]
    return CampaignConfig(model, design, reps, args.seed, cfg, args.workers, **kw)


def _write(table: ResultTable, out: Path) -> None:
    path = table.write(out)
    print(f"wrote {path} ({len(table)} rows)")


def cmd_shock_paired(args) -> int:
    c = _campaign(args, "shock", "paired", _model_configs(args)["shock"])
    data = run_paired_shock(c)
    _write(shock_paired_table(c, data), args.out)
    med = paired_median_test(data.y1, data.y2, args.perms, Rng(derive_seed(args.seed, "cli-perm")))
    print(f"paired median test: effect={med.effect_size:g} p={med.p_value:.4g}")
    return 0


def cmd_shock_unpaired(args) -> int:
    c = _campaign(args, "shock", "unpaired", _model_configs(args)["shock"])
    samples = run_unpaired_shock(c)
    _write(shock_unpaired_table(c, samples), args.out)
    med = median_diff_test(samples.on, samples.off, args.perms, Rng(derive_seed(args.seed, "cli-perm")))
    print(f"unpaired median test: effect={med.effect_size:g} p={med.p_value:.4g}")
    return 0


def cmd_accidents_paired(args) -> int:
    c = _campaign(args, "accidents", "paired", _model_configs(args)["accidents"])
    data = run_paired_accidents(c)
    _write(accidents_paired_table(c, data), args.out)
    if data.treatment != 0:
        fit = paired_coefficient(data)
        print(
            f"paired estimator: intercept={fit.intercept:.2f} coefficient={fit.coefficient:.2f} "
            f"se={fit.std_error:.2f} p={fit.p_value:.3g}"
        )
    return 0


def cmd_accidents_observational(args) -> int:
    c = _campaign(args, "accidents", "observational", _model_configs(args)["accidents"])
    _write(run_observational_accidents(c), args.out)
    return 0


def cmd_replicate_all(args) -> int:
    cfgs = _model_configs(args)
    reps = None
    if args.replications:
        # --replications scales every campaign relative to the default counts
        factor = args.replications / DEFAULT_REPLICATIONS["shock-paired"]
        reps = {k: max(2, 2 * round(v * factor / 2)) for k, v in DEFAULT_REPLICATIONS.items()}
    campaigns = replicate_all(
        args.seed, cfgs["shock"], cfgs["accidents"], reps, args.perms, args.workers
    )
    report = write_campaigns(campaigns, args.out)
    print(report.read_text(encoding="utf-8"))
    print(f"wrote {report}")
    return 0


def _sweep_values(start: float, stop: float, step: float) -> list[float]:
    if step <= 0:
        raise ConfigError("sweep step must be positive")
    if stop < start:
        raise ConfigError("sweep stop must be >= start")
    n = math.floor((stop - start) / step + 1e-9) + 1
    return [round(start + k * step, 12) for k in range(n)]


def cmd_sweep(args) -> int:
    owners = [m for m, keys in MODEL_KEYS.items() if args.param in keys]
    if args.model:
        if args.model not in owners:
            raise ConfigError(f"{args.model} has no parameter {args.param!r}")
        model = args.model
    elif len(owners) == 1:
        model = owners[0]
    elif owners:
        raise ConfigError(f"{args.param!r} exists in several models; pass --model")
    else:
        raise ConfigError(f"unknown parameter {args.param!r}")

    base = _model_configs(args)[model]
    rows = []
    for value in _sweep_values(args.start, args.stop, args.step):
        label = f"{value:g}"
        cfg: dict[str, Any] = {**base, args.param: value}
        c = _campaign(args, model, "paired", cfg)
        if model == "shock":
            data = run_paired_shock(c)
            table = shock_paired_table(c, data)
        else:
            data = run_paired_accidents(c)
            table = accidents_paired_table(c, data)
        table.name = f"sweep-{args.param}-{label}"
        _write(table, args.out)
        med = paired_median_test(data.y1, data.y2, args.perms, Rng(derive_seed(args.seed, "sweep", label)))
        try:
            t = paired_t_test(data.y1, data.y2)
            t_stat, t_p = t.statistic, t.p_value
        except ValueError:
            t_stat, t_p = math.nan, math.nan
        rows.append(
            (label, len(data), float(data.y1.mean()), float(data.y2.mean()), med.effect_size, med.p_value, t_stat, t_p)
        )
    summary = ResultTable(
        f"sweep-{args.param}",
        ["value", "pairs", "mean_off", "mean_on", "median_effect", "median_p", "paired_t", "paired_t_p"],
        rows,
        {"model": model, "param": args.param, "base_seed": args.seed},
    )
    _write(summary, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=1, help="base seed (default 1)")
    common.add_argument("--config", type=Path, help="flat 'key = value' model config file")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--replications", type=int, help="override the default replication count")
    common.add_argument("--perms", type=int, default=DEFAULT_PERMUTATIONS, help="permutations per median test")
    common.add_argument("--workers", type=int, default=1, help="worker processes for replications")

    parser = argparse.ArgumentParser(
        prog="midknow", description="Paired (snapshot/restore) versus unpaired agent-model experiments."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("shock-paired", cmd_shock_paired, "paired shock/no-shock runs"),
        ("shock-unpaired", cmd_shock_unpaired, "independent shock and no-shock runs"),
        ("accidents-paired", cmd_accidents_paired, "paired fatigue treatment runs"),
        ("accidents-observational", cmd_accidents_observational, "independent factory runs"),
        ("replicate-all", cmd_replicate_all, "every campaign plus the text report"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=fn)
    p = sub.add_parser("sweep", parents=[common], help="paired campaigns over a range of one parameter")
    p.add_argument("param")
    p.add_argument("start", type=float)
    p.add_argument("stop", type=float)
    p.add_argument("step", type=float)
    p.add_argument("--model", choices=sorted(MODEL_KEYS))
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
