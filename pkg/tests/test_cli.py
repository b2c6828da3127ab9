import csv
import json
import os

import pytest

from ledmm import cli

SMALL = {
    "gen": {"cols": 5, "rows": 5, "n_routes": 4, "route_len": 600.0, "bus_per_route": 3, "n_trips": 3,
            "trip_legs": 2, "trip_min_len": 500.0},
    "led": {"K_g": 1},
    "eval": {"methods": ["lnsp", "spt"], "intervals": [5, 30]},
}


def write_config(tmp_path, extra=None, name="cfg.json"):
    cfg = json.loads(json.dumps(SMALL))
    for k, v in (extra or {}).items():
        cfg.setdefault(k, {}).update(v) if isinstance(v, dict) else cfg.__setitem__(k, v)
    cfg["paths"] = {"out_dir": str(tmp_path / "out")}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_gen_creates_dir_and_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["gen", "--config", cfg]) == 0
    out = tmp_path / "out"
    names = ["network.txt", "routes.csv", "bus.csv", "bus_routes.csv", "trips.csv", "truth.csv"]
    first = {n: read(out / n) for n in names}
    assert cli.main(["gen", "--config", cfg]) == 0
    assert {n: read(out / n) for n in names} == first
    assert cli.main(["gen", "--config", cfg, "--seed", "5"]) == 0
    assert read(out / "trips.csv") != first["trips.csv"]


def test_invalid_config_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path, {"gen": {"cols": 1}})
    assert cli.main(["gen", "--config", cfg]) == 2
    assert "gen.cols" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"match": {"window": 3}}))
    assert cli.main(["gen", "--config", str(bad)]) == 2
    assert "match.window" in capsys.readouterr().err
    cfg = write_config(tmp_path, {"match": {"k": 0}})
    assert cli.main(["gen", "--config", cfg]) == 2
    assert "match" in capsys.readouterr().err


def test_unknown_method_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["match", "--method", "viterbi"])
    assert exc.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


def test_missing_inputs_name_the_file(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["build-led", "--config", cfg]) == 2
    assert "network.txt" in capsys.readouterr().err
    assert cli.main(["gen", "--config", cfg]) == 0
    assert cli.main(["match", "--config", cfg]) == 2
    assert "led.txt" in capsys.readouterr().err
    # the geometric ablation needs no LED model
    assert cli.main(["match", "--config", cfg, "--method", "lnsp-nosed"]) == 0
    assert cli.main(["build-led", "--config", cfg]) == 0
    os.remove(tmp_path / "out" / "truth.csv")
    assert cli.main(["eval", "--config", cfg]) == 2
    assert "truth.csv" in capsys.readouterr().err


def test_empty_bus_file_is_an_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["gen", "--config", cfg]) == 0
    (tmp_path / "out" / "bus.csv").write_text("traj_id,lon,lat,t\n")
    assert cli.main(["build-led", "--config", cfg]) == 2
    assert "bus.csv" in capsys.readouterr().err


def test_build_led_prints_family_table_and_is_stable(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["gen", "--config", cfg]) == 0
    capsys.readouterr()
    assert cli.main(["build-led", "--config", cfg]) == 0
    text = capsys.readouterr().out
    assert "sub-regions:" in text and "family,sub_regions" in text
    first = read(tmp_path / "out" / "led.txt")
    assert cli.main(["build-led", "--config", cfg]) == 0
    assert read(tmp_path / "out" / "led.txt") == first


def test_noiseless_match_equals_truth(tmp_path):
    cfg = write_config(tmp_path, {"gen": {"regimes": None, "trip_legs": 1, "bus_per_route": 2}})
    assert cli.main(["gen", "--config", cfg]) == 0
    assert cli.main(["build-led", "--config", cfg]) == 0
    assert cli.main(["match", "--config", cfg]) == 0
    out = tmp_path / "out"
    with open(out / "truth.csv") as fh:
        truth = {r["traj_id"]: r["segments"] for r in csv.DictReader(fh)}
    with open(out / "matches_lnsp.csv") as fh:
        got = {r["traj_id"]: r["segments"] for r in csv.DictReader(fh)}
    assert got == truth


def test_pipeline_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["pipeline", "--config", cfg, "--methods", "lnsp,spt", "--intervals", "30"]) == 0
    with open(tmp_path / "out" / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["method"], r["interval_s"]) for r in rows] == [("lnsp", "30"), ("spt", "30")]
    assert "acc" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["gen", "build-led", "match", "eval", "pipeline"])
def test_help_lists_flags(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--seed", "--out", "--jobs"):
        assert flag in text


def test_default_config_file_matches_builtin():
    here = os.path.dirname(__file__)
    with open(os.path.join(here, "..", "configs", "default.json")) as fh:
        assert json.load(fh) == cli.DEFAULTS
