import csv
import json

import pytest

from gridworm import cli


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.SEED_ENV, raising=False)
    return tmp_path


@pytest.mark.parametrize("argv", [
    ["simulate", "--alr", "1.5"],
    ["simulate", "--alr", "abc"],
    ["simulate", "--strategy", "sneaky"],
    ["simulate", "--nodes", "999"],
    ["simulate", "--epsilon", "1.0", "--epsilon-volts", "2400"],
    ["sweep", "--alr-list", "0.1,2.0"],
    ["sweep", "--strategies", "flipping,sneaky"],
    ["sweep", "--jobs", "0"],
    ["gen-dataset"],
    ["gen-dataset", "--out-dir", "x", "--sizes", "0"],
    ["train-eval", "--out", "m.csv"],
    ["report", "--out", "r"],
    ["nonsense"],
    [],
])
def test_usage_errors_exit_two(in_tmp, argv):
    assert cli.main(argv) == 2


def test_missing_feeder_and_bad_config(in_tmp):
    assert cli.main(["simulate", "--feeder", "nowhere.json"]) == 2
    (in_tmp / "bad.json").write_text("[1, 2]")
    assert cli.main(["simulate", "--config", "bad.json"]) == 2
    (in_tmp / "typo.json").write_text(json.dumps({"simulate": {"alrr": 0.2}}))
    assert cli.main(["simulate", "--config", "typo.json"]) == 2
    assert cli.main(["simulate", "--config", "missing.json"]) == 2


def test_env_seed_must_be_integer(in_tmp, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "seven")
    assert cli.main(["simulate"]) == 2


def test_precedence_flag_over_config_over_default(in_tmp, monkeypatch):
    (in_tmp / "cfg.json").write_text(json.dumps({"seed": 4, "simulate": {"alr": 0.25, "p": 0.3}}))
    args, src = cli.parse(["simulate", "--config", "cfg.json", "--alr", "0.4"])
    assert args.alr == 0.4 and src["alr"] == "flag"
    assert args.p == 0.3 and src["p"] == "config"
    assert args.seed == 4 and src["seed"] == "config"
    assert args.strategy == "none" and src["strategy"] == "default"
    monkeypatch.setenv(cli.SEED_ENV, "11")
    args, src = cli.parse(["simulate"])
    assert args.seed == 11 and src["seed"] == "default"
    args, _ = cli.parse(["simulate", "--config", "cfg.json"])
    assert args.seed == 4
    args, _ = cli.parse(["simulate", "--seed", "2"])
    assert args.seed == 2


def test_config_strings_pass_through_argument_types(in_tmp):
    (in_tmp / "cfg.json").write_text(json.dumps({"sweep": {"alr-list": "0.1,0.2"}}))
    args, src = cli.parse(["sweep", "--config", "cfg.json"])
    assert args.alr_list == [0.1, 0.2] and src["alr_list"] == "config"


def test_simulate_writes_result_and_manifest(in_tmp, capsys):
    code, out = run(["simulate", "--strategy", "flipping", "--alr", "1.0", "--out", "day.json",
                     "--dump-snapshots", "snap.csv"], capsys)
    assert code == 0
    assert "taps 1440" in out.out
    doc = json.loads((in_tmp / "day.json").read_text())
    assert doc["taps"] == 1440 and doc["lifespan"] == 0.025
    assert len(doc["tap_position"]) == 1440 and len(doc["nodes"]) == 13
    with open(in_tmp / "snap.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1441 and rows[0][0] == "minute" and rows[0][-1].startswith("label_")
    man = json.loads((in_tmp / "day.json.run.json").read_text())
    assert man["command"] == "simulate" and man["exit_code"] == 0
    assert man["config_sources"]["alr"] == "flag" and man["config_sources"]["p"] == "default"
    assert man["seeds"] == {"attacker": 0, "demand": 0}
    assert len(man["config_hash"]) == 64
    assert {"day.json", "snap.csv"} <= set(man["outputs"])


def test_unattacked_day_and_collapse(in_tmp, capsys):
    code, out = run(["simulate"], capsys)
    assert code == 0 and "taps 36" in out.out
    code, out = run(["simulate", "--strategy", "flipping", "--alr", "1.0", "--nodes", "16",
                     "--out", "x.json"], capsys)
    assert code == 1 and "error" in out.err
    assert json.loads((in_tmp / "x.json.run.json").read_text())["exit_code"] == 1


def test_epsilon_volts_equals_per_unit(in_tmp, capsys):
    from gridworm.feeder import default_feeder
    f = default_feeder()
    base = f.buses[f.bus_index(f.oltcs[0].to_bus)].base_voltage
    run(["simulate", "--strategy", "heuristic", "--alr", "0.3", "--epsilon", "1.0166",
         "--out", "a.json"], capsys)
    run(["simulate", "--strategy", "heuristic", "--alr", "0.3", "--epsilon-volts",
         repr(1.0166 * base), "--out", "b.json"], capsys)
    a = json.loads((in_tmp / "a.json").read_text())
    b = json.loads((in_tmp / "b.json").read_text())
    assert a["taps"] == b["taps"]
    assert b["epsilon_pu"] == pytest.approx(1.0166, rel=1e-12)


def test_config_hash_ignores_jobs_and_paths():
    settings = {"command": "sweep", "seed": 1, "alr_list": [0.1], "jobs": 1, "out": "a.csv"}
    other = dict(settings, jobs=8, out="b.csv")
    assert cli._config_hash("sweep", settings, {}) == cli._config_hash("sweep", other, {})
    assert cli._config_hash("sweep", settings, {}) != cli._config_hash("sweep", dict(settings, seed=2), {})


def test_pipeline_sweep_dataset_train_report(in_tmp, capsys):
    code, out = run(["sweep", "--alr-list", "0.0,0.5", "--strategies", "flipping",
                     "--out", "sweep.csv"], capsys)
    assert code == 0
    with open("sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["alr"] for r in rows] == ["0.0", "0.5"]
    assert rows[0]["taps"] == "36" and rows[0]["lifespan"] == "1.0"

    code, out = run(["gen-dataset", "--sizes", "1", "--alrs", "0.1", "--strategies",
                     "flipping", "--out-dir", "corpus"], capsys)
    assert code == 0
    assert out.out.split() == ["N", "13", "T", "1440", "d", "61", "K", "13"]
    assert (in_tmp / "corpus" / "run_manifest.json").exists()

    code, out = run(["train-eval", "--dataset-dir", "corpus", "--window", "7", "--out", "m.csv"],
                    capsys)
    assert code == 2
    code, out = run(["train-eval", "--dataset-dir", "corpus", "--window", "60", "--out", "m.csv",
                     "--trees-dir", "trees"], capsys)
    assert code == 0
    with open("m.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 14 and rows[-1]["node"] == "baseline"
    assert sorted(p.name for p in (in_tmp / "trees").iterdir()) == ["trees_fold0.json",
                                                                  "trees_fold1.json"]

    code, out = run(["report", "--in", "sweep.csv", "m.csv", "--out", "rep"], capsys)
    assert code == 0
    summary = (in_tmp / "rep" / "summary.txt").read_text()
    assert "worst node" in summary and "three worst nodes" in summary
    assert (in_tmp / "rep" / "lifespan.csv").read_text().startswith("alr,lifespan_flipping")
    assert (in_tmp / "rep" / "nodes.csv").exists()
    (in_tmp / "empty").mkdir()
    assert cli.main(["report", "--in", "empty", "--out", "rep2"]) == 2


def test_gen_dataset_reports_failed_cells(in_tmp, capsys):
    (in_tmp / "cfg.json").write_text(json.dumps({"gen-dataset": {
        "sizes": [1], "alrs": [1.0], "strategies": ["flipping"], "out_dir": "c"}}))
    code, out = run(["gen-dataset", "--config", "cfg.json"], capsys)
    assert code == 1
    assert "failed cell" in out.err
    man = json.loads((in_tmp / "c" / "manifest.json").read_text())
    assert man["failures"]


def test_calibrate_is_idempotent_on_bundled(in_tmp, capsys):
    code, out = run(["calibrate", "--out", "f.json"], capsys)
    assert code == 0 and "taps 36" in out.out
    doc = json.loads((in_tmp / "f.json").read_text())
    assert doc["calibration"]["achieved_taps"] == 36
    assert cli.main(["simulate", "--feeder", "f.json"]) == 0
