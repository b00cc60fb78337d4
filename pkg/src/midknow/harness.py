"""Paired and unpaired experiment campaigns for both models, plus reporting.

Replication ``i`` of a campaign is seeded with ``derive_seed(base_seed,
campaign, i)``, so a campaign's output depends only on its inputs and is the
same whether replications run serially or on worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import engine
from .accidents_model import AccidentsConfig, focal_row, treat_fatigue
from .config import ConfigError, config_digest
from .determinism import Rng, derive_seed
from .shock_model import ShockConfig, apply_shock, count_negative
from .stats import (
    DEFAULT_PERMUTATIONS,
    PairedDataset,
    median_diff_test,
    ols,
    paired_coefficient,
    paired_median_test,
    paired_t_test,
    welch_t_test,
)

logger = logging.getLogger(__name__)

DEFAULT_REPLICATIONS = {
    "shock-paired": 200,
    "shock-unpaired": 400,
    "accidents-paired": 80,
    "accidents-observational": 160,
}


@dataclass(frozen=True)
class CampaignConfig:
    model: str
    design: str
    replications: int
    base_seed: int = 1
    model_config: Any = None
    workers: int = 1
    tag: str = ""

    def __post_init__(self):
        if self.design not in ("paired", "unpaired", "observational"):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        cfg = engine.get_model(self.model).parse_config(
            {} if self.model_config is None else self.model_config
        )
        object.__setattr__(self, "model_config", cfg)

    @property
    def campaign(self) -> str:
        name = f"{self.model}-{self.design}"
        return f"{name}-{self.tag}" if self.tag else name

    def seed_for(self, i: int, *extra: object) -> int:
        return derive_seed(self.base_seed, self.campaign, *extra, i)

    def digest(self) -> str:
        return config_digest(
            {
                "campaign": self.campaign,
                "replications": self.replications,
                "base_seed": self.base_seed,
                "model_config": self.model_config.to_dict(),
            }
        )


@dataclass
class ResultTable:
    name: str
    columns: list[str]
    rows: list[tuple]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> Path:
        """Write ``<name>.csv`` plus a ``<name>.meta.json`` sidecar carrying the timestamp."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{self.name}.csv"
        path.write_bytes(self.to_csv().encode("utf-8"))
        meta = dict(self.metadata)
        meta.setdefault("rows", len(self.rows))
        meta["written_at"] = datetime.now(timezone.utc).isoformat()
        (out_dir / f"{self.name}.meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
        )
        return path


@dataclass(frozen=True)
class UnpairedSamples:
    on: np.ndarray
    off: np.ndarray
    paired: bool = False


def _map(fn: Callable, args: Iterable, workers: int) -> list:
    args = list(args)
    if workers <= 1 or len(args) < 2:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * workers))))


# --- single replications (top level so worker processes can pickle them) ---


def shock_pair(config: ShockConfig, seed: int) -> tuple[int, int]:
    """One paired shock replication; returns (count_off, count_on)."""
    state = engine.setup("shock", config, seed)
    engine.run_until(state, config.shock_tick)
    saved = engine.snapshot(state)
    apply_shock(state.world, state.rng, enabled=config.shock_enabled)
    engine.run_until(state, config.final_tick)
    count_on = count_negative(state.world)
    state = engine.restore(saved)
    apply_shock(state.world, state.rng, enabled=False)
    engine.run_until(state, config.final_tick)
    return count_negative(state.world), count_on


def shock_single(config: ShockConfig, seed: int, shocked: bool) -> int:
    state = engine.setup("shock", config, seed)
    engine.run_until(state, config.shock_tick)
    apply_shock(state.world, state.rng, enabled=shocked)
    engine.run_until(state, config.final_tick)
    return count_negative(state.world)


def accidents_pair(config: AccidentsConfig, seed: int) -> tuple[float, int, int]:
    """One paired factory replication; returns (fatigue, accidents_1, accidents_2)."""
    state = engine.setup("accidents", config, seed)
    saved = engine.snapshot(state)
    engine.run_until(state, config.run_length)
    fatigue, _, accidents_1 = focal_row(state.world)
    state = engine.restore(saved)
    treat_fatigue(state.world, config.treatment_delta)
    engine.run_until(state, config.run_length)
    return fatigue, accidents_1, focal_row(state.world)[2]


def accidents_single(config: AccidentsConfig, seed: int) -> tuple[float, float, int]:
    state = engine.setup("accidents", config, seed)
    engine.run_until(state, config.run_length)
    return focal_row(state.world)


# --- campaigns ---------------------------------------------------------------


def _require(cfg: CampaignConfig, model: str, design: str) -> None:
    if (cfg.model, cfg.design) != (model, design):
        raise ConfigError(f"campaign {cfg.campaign!r} is not {model}-{design}")


def run_paired_shock(cfg: CampaignConfig) -> PairedDataset:
    _require(cfg, "shock", "paired")
    args = [(cfg.model_config, cfg.seed_for(i)) for i in range(cfg.replications)]
    rows = np.array(_map(shock_pair, args, cfg.workers), dtype=np.float64)
    return PairedDataset(
        x=np.arange(cfg.replications, dtype=np.float64),
        y1=rows[:, 0],
        y2=rows[:, 1],
        treatment=float(cfg.model_config.shock_size),
        paired=True,
    )


def run_unpaired_shock(cfg: CampaignConfig) -> UnpairedSamples:
    """Independent runs: the first half shocked, the second half not."""
    _require(cfg, "shock", "unpaired")
    if cfg.replications % 2:
        raise ConfigError("unpaired designs need an even number of replications")
    half = cfg.replications // 2
    args = [(cfg.model_config, cfg.seed_for(i), i < half) for i in range(cfg.replications)]
    counts = np.array(_map(shock_single, args, cfg.workers), dtype=np.float64)
    return UnpairedSamples(on=counts[:half], off=counts[half:])


def run_paired_accidents(cfg: CampaignConfig) -> PairedDataset:
    _require(cfg, "accidents", "paired")
    args = [(cfg.model_config, cfg.seed_for(i)) for i in range(cfg.replications)]
    rows = np.array(_map(accidents_pair, args, cfg.workers), dtype=np.float64)
    return PairedDataset(
        x=rows[:, 0],
        y1=rows[:, 1],
        y2=rows[:, 2],
        treatment=cfg.model_config.treatment_delta,
        paired=True,
    )


def run_observational_accidents(cfg: CampaignConfig) -> ResultTable:
    _require(cfg, "accidents", "observational")
    args = [(cfg.model_config, cfg.seed_for(i)) for i in range(cfg.replications)]
    rows = _map(accidents_single, args, cfg.workers)
    return ResultTable(
        "accidents-observational",
        ["run_id", "fatigue", "clothing", "accidents"],
        [(i, f, c, a) for i, (f, c, a) in enumerate(rows)],
        _metadata(cfg, paired=False),
    )


# --- tables ------------------------------------------------------------------


def _metadata(cfg: CampaignConfig, paired: bool) -> dict[str, Any]:
    return {
        "campaign": cfg.campaign,
        "base_seed": cfg.base_seed,
        "replications": cfg.replications,
        "config_digest": cfg.digest(),
        "model_config": cfg.model_config.to_dict(),
        "paired_by_snapshot": paired,
    }


def shock_paired_table(cfg: CampaignConfig, data: PairedDataset) -> ResultTable:
    rows = [(i, int(off), int(on)) for i, (off, on) in enumerate(zip(data.y1, data.y2))]
    return ResultTable(
        "shock-paired", ["pair_id", "count_off", "count_on"], rows, _metadata(cfg, data.paired)
    )


def shock_unpaired_table(cfg: CampaignConfig, samples: UnpairedSamples, name: str = "shock-unpaired") -> ResultTable:
    rows = [(i, "on", int(v)) for i, v in enumerate(samples.on)]
    rows += [(len(samples.on) + i, "off", int(v)) for i, v in enumerate(samples.off)]
    return ResultTable(name, ["run_id", "arm", "count"], rows, _metadata(cfg, False))


def accidents_paired_table(cfg: CampaignConfig, data: PairedDataset) -> ResultTable:
    rows = [
        (i, float(x), float(x + data.treatment), int(a1), int(a2))
        for i, (x, a1, a2) in enumerate(zip(data.x, data.y1, data.y2))
    ]
    return ResultTable(
        "accidents-paired",
        ["pair_id", "fatigue", "fatigue_plus1", "accidents_1", "accidents_2"],
        rows,
        _metadata(cfg, data.paired),
    )


# --- report ------------------------------------------------------------------


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    def cell(v: Any) -> str:
        if isinstance(v, float):
            if v != 0 and abs(v) < 1e-3:
                return f"{v:.2e}"
            return f"{v:.2f}"
        return str(v)

    body = [[cell(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[j]) for r in body)) if body else len(h) for j, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


@dataclass
class Campaigns:
    """Every table ``replicate-all`` produces, keyed by table name."""

    tables: dict[str, ResultTable]
    n_perm: int
    base_seed: int


def render_report(c: Campaigns) -> str:
    """Plain-text analogues of the shock tables and the two accident tables."""
    t = c.tables
    perm_rng = Rng(derive_seed(c.base_seed, "report-permutations"))
    out = [
        "Middle-knowledge replication report",
        f"base seed: {c.base_seed}",
        f"permutations per median test: {c.n_perm}",
        "config digests: "
        + ", ".join(f"{name}={tab.metadata['config_digest']}" for name, tab in sorted(t.items())),
        "",
    ]

    sp = t["shock-paired"]
    off, on = sp.column("count_off").astype(float), sp.column("count_on").astype(float)
    med_rows = []
    pm = paired_median_test(off, on, c.n_perm, perm_rng)
    med_rows.append(("paired", 2 * len(sp), pm.effect_size, pm.p_value))
    unpaired_names = sorted(n for n in t if n.startswith("shock-unpaired"))
    for name in unpaired_names:
        tab = t[name]
        arm, count = tab.column("arm"), tab.column("count").astype(float)
        um = median_diff_test(count[arm == "on"], count[arm == "off"], c.n_perm, perm_rng)
        med_rows.append((f"unpaired ({len(tab)})", len(tab), um.effect_size, um.p_value))
    out += [
        "Shock model: difference of medians (shock vs no shock)",
        format_table(["design", "datapoints", "effect size", "p-value"], med_rows),
        "",
    ]

    pt = paired_t_test(off, on)
    tab = t["shock-unpaired"]
    arm, count = tab.column("arm"), tab.column("count").astype(float)
    wt = welch_t_test(count[arm == "off"], count[arm == "on"])
    out += [
        "Shock model: t tests for a difference of means",
        format_table(
            ["test", "effect size", "t", "df", "p-value"],
            [
                ("paired", pt.effect_size, pt.statistic, pt.df, pt.p_value),
                ("welch", wt.effect_size, wt.statistic, wt.df, wt.p_value),
            ],
        ),
        "",
    ]

    ap = t["accidents-paired"]
    head = [tuple(r) for r in ap.rows[:5]]
    data = PairedDataset(
        ap.column("fatigue").astype(float),
        ap.column("accidents_1").astype(float),
        ap.column("accidents_2").astype(float),
    )
    fit = paired_coefficient(data)
    out += [
        f"Accidents model: paired runs ({len(ap)} pairs, {2 * len(ap)} datapoints), first rows",
        format_table(["agent", "fatigue", "fatigue + 1", "accidents_1", "accidents_2"], head),
        "",
        "Accidents model: paired estimator",
        format_table(
            ["intercept", "coefficient", "std. error", "p-value"],
            [(fit.intercept, fit.coefficient, fit.std_error, fit.p_value)],
        ),
        "",
    ]

    ob = t["accidents-observational"]
    y = ob.column("accidents").astype(float)
    fatigue = ob.column("fatigue").astype(float)
    clothing = ob.column("clothing").astype(float)
    for title, preds in (
        ("controlling for clothing", {"fatigue": fatigue, "clothing": clothing}),
        ("fatigue only", {"fatigue": fatigue}),
    ):
        reg = ols(y, preds)
        out += [
            f"Accidents model: observational regression ({len(ob)} runs), {title}",
            format_table(
                ["term", "estimate", "std. error", "t-value", "p-value"],
                [(tm.name, tm.estimate, tm.std_error, tm.t_value, tm.p_value) for tm in reg.terms],
            ),
            "",
        ]
    return "\n".join(out)


def replicate_all(
    base_seed: int = 1,
    shock_config: Mapping[str, Any] | ShockConfig | None = None,
    accidents_config: Mapping[str, Any] | AccidentsConfig | None = None,
    replications: Mapping[str, int] | None = None,
    n_perm: int = DEFAULT_PERMUTATIONS,
    workers: int = 1,
    scaled: bool = True,
) -> Campaigns:
    reps = {**DEFAULT_REPLICATIONS, **(replications or {})}

    def campaign(model: str, design: str, cfg: Any) -> CampaignConfig:
        return CampaignConfig(model, design, reps[f"{model}-{design}"], base_seed, cfg, workers)

    tables: dict[str, ResultTable] = {}
    c = campaign("shock", "paired", shock_config)
    tables["shock-paired"] = shock_paired_table(c, run_paired_shock(c))
    c = campaign("shock", "unpaired", shock_config)
    tables["shock-unpaired"] = shock_unpaired_table(c, run_unpaired_shock(c))
    if scaled:
        c = replace(c, replications=4 * reps["shock-unpaired"], tag="scaled")
        name = f"shock-unpaired-{c.replications}"
        tables[name] = shock_unpaired_table(c, run_unpaired_shock(c), name=name)
    c = campaign("accidents", "paired", accidents_config)
    tables["accidents-paired"] = accidents_paired_table(c, run_paired_accidents(c))
    c = campaign("accidents", "observational", accidents_config)
    tables["accidents-observational"] = run_observational_accidents(c)
    logger.info("finished %d tables", len(tables))
    return Campaigns(tables, n_perm, base_seed)


def write_campaigns(c: Campaigns, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    for tab in c.tables.values():
        tab.write(out_dir)
    report = out_dir / "report.txt"
    report.write_text(render_report(c) + "\n", encoding="utf-8")
    return report
