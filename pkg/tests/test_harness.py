import csv
import json

import numpy as np
import pytest

from midknow import harness
from midknow.cli import main, split_config
from midknow.config import ConfigError, config_digest, load_config_file, parse_config_text
from midknow.harness import (
    CampaignConfig,
    ResultTable,
    accidents_paired_table,
    render_report,
    replicate_all,
    run_observational_accidents,
    run_paired_accidents,
    run_paired_shock,
    run_unpaired_shock,
    shock_paired_table,
    shock_unpaired_table,
)

SMALL_SHOCK = {"agents": 49, "shock_tick": 10, "final_tick": 20, "n_shocked": 10}
SHORT_FACTORY = {"run_length": 30}


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_paired_shock_counts():
    c = CampaignConfig("shock", "paired", 12, 3, SMALL_SHOCK)
    data = run_paired_shock(c)
    assert len(data) == 12
    assert data.paired
    assert data.y1.size + data.y2.size == 24
    table = shock_paired_table(c, data)
    assert table.columns == ["pair_id", "count_off", "count_on"]
    assert table.metadata["paired_by_snapshot"] is True


def test_paired_shock_csv_bytes_repeat():
    c = CampaignConfig("shock", "paired", 8, 5, SMALL_SHOCK)
    first = shock_paired_table(c, run_paired_shock(c)).to_csv()
    second = shock_paired_table(c, run_paired_shock(c)).to_csv()
    assert first == second
    assert first.startswith("pair_id,count_off,count_on\r\n")


def test_zero_shock_gives_identical_pairs():
    c = CampaignConfig("shock", "paired", 10, 1, {**SMALL_SHOCK, "shock_size": 0})
    data = run_paired_shock(c)
    assert np.array_equal(data.y1, data.y2)


def test_pair_matches_independent_runs():
    # each arm of a pair equals a fresh run from the same seed
    cfg = harness.ShockConfig(**SMALL_SHOCK)
    off, on = harness.shock_pair(cfg, 99)
    assert on == harness.shock_single(cfg, 99, True)
    assert off == harness.shock_single(cfg, 99, False)


def test_unpaired_shock_split_and_seeds():
    c = CampaignConfig("shock", "unpaired", 10, 2, SMALL_SHOCK)
    samples = run_unpaired_shock(c)
    assert samples.on.size == samples.off.size == 5
    assert not samples.paired
    assert len({c.seed_for(i) for i in range(10)}) == 10
    table = shock_unpaired_table(c, samples)
    assert table.columns == ["run_id", "arm", "count"]
    assert [r[1] for r in table.rows] == ["on"] * 5 + ["off"] * 5
    assert table.metadata["paired_by_snapshot"] is False


def test_unpaired_odd_rejected():
    with pytest.raises(ConfigError):
        run_unpaired_shock(CampaignConfig("shock", "unpaired", 3, 1, SMALL_SHOCK))


def test_zero_replications_rejected():
    with pytest.raises(ConfigError):
        CampaignConfig("accidents", "observational", 0)


def test_wrong_campaign_kind_rejected():
    with pytest.raises(ConfigError):
        run_paired_shock(CampaignConfig("accidents", "paired", 2))
    with pytest.raises(ConfigError):
        CampaignConfig("shock", "crossover", 2)


def test_paired_accidents_table_schema():
    c = CampaignConfig("accidents", "paired", 6, 4, SHORT_FACTORY)
    data = run_paired_accidents(c)
    table = accidents_paired_table(c, data)
    assert table.columns == ["pair_id", "fatigue", "fatigue_plus1", "accidents_1", "accidents_2"]
    assert len(table) == 6
    for row in table.rows:
        assert row[2] == pytest.approx(row[1] + 1.0)
        assert 2.0 <= row[1] <= 10.0


def test_zero_delta_gives_identical_pairs():
    c = CampaignConfig("accidents", "paired", 10, 1, {**SHORT_FACTORY, "treatment_delta": 0})
    data = run_paired_accidents(c)
    assert np.array_equal(data.y1, data.y2)


def test_observational_rows():
    c = CampaignConfig("accidents", "observational", 9, 1, SHORT_FACTORY)
    table = run_observational_accidents(c)
    assert len(table) == 9
    assert table.columns == ["run_id", "fatigue", "clothing", "accidents"]
    assert table.column("run_id").tolist() == list(range(9))


def test_workers_match_serial():
    serial = CampaignConfig("shock", "paired", 6, 8, SMALL_SHOCK, workers=1)
    parallel = CampaignConfig("shock", "paired", 6, 8, SMALL_SHOCK, workers=2)
    a, b = run_paired_shock(serial), run_paired_shock(parallel)
    assert np.array_equal(a.y1, b.y1) and np.array_equal(a.y2, b.y2)
    fa = run_observational_accidents(CampaignConfig("accidents", "observational", 4, 2, SHORT_FACTORY, workers=2))
    fb = run_observational_accidents(CampaignConfig("accidents", "observational", 4, 2, SHORT_FACTORY))
    assert fa.rows == fb.rows


def test_digest_tracks_inputs():
    a = CampaignConfig("shock", "paired", 6, 8, SMALL_SHOCK)
    assert a.digest() == CampaignConfig("shock", "paired", 6, 8, dict(SMALL_SHOCK)).digest()
    assert a.digest() != CampaignConfig("shock", "paired", 6, 9, SMALL_SHOCK).digest()
    assert a.digest() != CampaignConfig("shock", "paired", 6, 8, {**SMALL_SHOCK, "p_local": 0.5}).digest()
    assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})


def test_table_write(tmp_path):
    t = ResultTable("demo", ["a", "b"], [(1, "x,y"), (2, 'say "hi"')], {"seed": 3})
    path = t.write(tmp_path)
    assert path.read_bytes() == b'a,b\r\n1,"x,y"\r\n2,"say ""hi"""\r\n'
    meta = json.loads((tmp_path / "demo.meta.json").read_text())
    assert meta["rows"] == 2 and meta["seed"] == 3 and "written_at" in meta


def test_report_is_pure_function_of_tables():
    reps = {"shock-paired": 10, "shock-unpaired": 10, "accidents-paired": 8, "accidents-observational": 12}
    c = replicate_all(3, SMALL_SHOCK, SHORT_FACTORY, reps, n_perm=500, scaled=False)
    assert render_report(c) == render_report(c)
    text = render_report(c)
    assert "base seed: 3" in text
    assert c.tables["shock-paired"].metadata["config_digest"] in text
    assert "controlling for clothing" in text and "fatigue only" in text


# --- config files and CLI ----------------------------------------------------


def test_config_text_parsing(tmp_path):
    text = "# comment\nagents = 49\n\nshock.p_local=0.5  # trailing\naccidents.run_length = 20\n"
    assert parse_config_text(text) == {"agents": "49", "shock.p_local": "0.5", "accidents.run_length": "20"}
    path = tmp_path / "c.cfg"
    path.write_text(text)
    routed = split_config(load_config_file(path))
    assert routed["shock"] == {"agents": "49", "p_local": "0.5"}
    assert routed["accidents"] == {"agents": "49", "run_length": "20"}


@pytest.mark.parametrize("text", ["agents 49\n", "a = 1\na = 2\n"])
def test_config_text_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_split_config_unknown_key():
    with pytest.raises(ConfigError):
        split_config({"colour": "red"})
    with pytest.raises(ConfigError):
        split_config({"shock.run_length": "3"})


def test_cli_shock_paired_rows(tmp_path, capsys):
    assert main(["shock-paired", "--replications", "200", "--seed", "7", "--perms", "2000", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "shock-paired.csv")
    assert rows[0] == ["pair_id", "count_off", "count_on"]
    assert len(rows) == 201
    assert "paired median test" in capsys.readouterr().out


def test_cli_with_config_file(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("agents = 49\nshock_tick = 10\nfinal_tick = 20\nn_shocked = 10\n")
    code = main(["shock-unpaired", "--replications", "6", "--perms", "200", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 0
    meta = json.loads((tmp_path / "shock-unpaired.meta.json").read_text())
    assert meta["model_config"]["agents"] == 49


def test_cli_accidents_commands(tmp_path):
    out = str(tmp_path)
    assert main(["accidents-paired", "--replications", "5", "--out", out]) == 0
    assert main(["accidents-observational", "--replications", "7", "--out", out]) == 0
    assert len(read_csv(tmp_path / "accidents-paired.csv")) == 6
    assert read_csv(tmp_path / "accidents-observational.csv")[0] == ["run_id", "fatigue", "clothing", "accidents"]


def test_cli_unknown_flag(capsys):
    assert main(["shock-paired", "--bogus"]) != 0
    assert "usage" in capsys.readouterr().err


def test_cli_unknown_subcommand(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err


def test_cli_bad_config_value(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("p_local = 3\n")
    assert main(["shock-paired", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_sweep(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("agents = 49\nshock_tick = 10\nfinal_tick = 20\nn_shocked = 10\n")
    code = main(
        ["sweep", "p_local", "0.0", "1.0", "0.25", "--replications", "4", "--perms", "200",
         "--config", str(cfg), "--out", str(tmp_path)]
    )
    assert code == 0
    outputs = {p.name for p in tmp_path.glob("sweep-p_local-*.csv")}
    assert outputs == {f"sweep-p_local-{v}.csv" for v in ("0", "0.25", "0.5", "0.75", "1")}
    summary = read_csv(tmp_path / "sweep-p_local.csv")
    assert len(summary) == 6


def test_cli_sweep_unknown_param(tmp_path):
    assert main(["sweep", "nope", "0", "1", "0.5", "--out", str(tmp_path)]) == 2


def test_cli_replicate_all_twice_identical(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["replicate-all", "--seed", "1", "--replications", "20", "--perms", "1000", "--out", str(out)]) == 0
        runs.append(out)
    a, b = runs
    assert (a / "report.txt").read_bytes() == (b / "report.txt").read_bytes()
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs == sorted(p.name for p in b.glob("*.csv"))
    assert "shock-unpaired-160.csv" in csvs
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
