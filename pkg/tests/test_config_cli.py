import csv
import json

import numpy as np
import pytest

from stochwave import cli, validation
from stochwave.cli import ResultRecord, load_json_record, main, run_subcommand, serialize_results
from stochwave.config import (ConfigError, defaults, load_config, load_preset, parse_config,
                              preset_names)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# -- configuration --------------------------------------------------------------------

def test_defaults_round_trip_through_ini():
    cfg = defaults()
    assert parse_config(cfg.to_ini()) == cfg


def test_parse_values_and_inline_comments():
    cfg = parse_config("[grid]\nn_points = 32   # coarse\n[noise]\nkind = dephasing ; phase\n"
                       "gamma = 0.25\n[converge]\ntaus = 0.004, 0.002, 0.001\n"
                       "[output]\ncovariance_snapshots = yes\n")
    assert cfg.grid["n_points"] == 32 and cfg.noise["kind"] == "dephasing"
    assert cfg.noise["gamma"] == 0.25 and cfg.converge["taus"] == [0.004, 0.002, 0.001]
    assert cfg.output["covariance_snapshots"] is True
    assert cfg.grid["length"] == 20.0


@pytest.mark.parametrize("text, line, field", [
    ("[grid]\nn_points = 64\nspacing = 1\n", 3, "grid.spacing"),
    ("\n[solver]\nx = 1\n", 2, "solver"),
    ("[grid]\nn_points = many\n", 2, "grid.n_points"),
    ("[physics]\nmass = -1\n", 2, "physics.mass"),
    ("[physics]\nmu = 2\n", 2, "physics.mu"),
    ("[noise]\nkind = telegraph\n", 2, "noise.kind"),
    ("[grid]\nn_points = 4\n[physics]\npotential = table\npotential_table = 1, 2\n", 5,
     "physics.potential_table"),
])
def test_config_errors_carry_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.ini")
    err = info.value.as_dict()
    assert err["error"] == "config" and err["path"] == "run.ini"
    assert err["line"] == line and err["field"] == field


def test_malformed_document_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("n_points = 3\n")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_all_presets_load():
    names = preset_names()
    for expected in ("ground_state", "harmonic_coherent", "free_gaussian"):
        assert expected in names
    for name in names:
        load_preset(name)
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("nope")


# -- serialization -------------------------------------------------------------------

def _record(columns, covariance=None):
    return ResultRecord("abc", "ensemble", defaults().echo(), columns, covariance)


def test_empty_series_gives_header_only_csv(tmp_path):
    rec = _record({"time": [], "norm": [], "energy": []})
    path = serialize_results(rec, tmp_path, "csv")[0]
    assert path.read_text() == "time,norm,energy\n"


def test_csv_precision_and_sidecar(tmp_path):
    values = [0.1, 1 / 3, np.pi * 1e-7]
    rec = _record({"time": values, "norm": values})
    paths = serialize_results(rec, tmp_path, "csv", stem="run")
    header, data = read_csv(paths[0])
    assert header == ["time", "norm"]
    np.testing.assert_array_equal(data[:, 1], values)  # 17 digits round-trips doubles
    echo = paths[1].read_text()
    assert "abc" in echo and parse_config(echo) == defaults()


def test_json_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    ent = rng.standard_normal((2, 3, 3)) + 1j * rng.standard_normal((2, 3, 3))
    rec = _record({"time": [0.0, 0.5], "norm": [1.0, 1 / 3], "norm_se": [float("nan"), 0.1]},
                  {"times": np.array([0.0, 0.5]), "entries": ent})
    path = serialize_results(rec, tmp_path, "json")[0]
    doc = json.loads(path.read_text())
    assert doc["covariance"]["shape"] == [2, 3, 3]
    assert doc["covariance"]["data"][:2] == [ent[0, 0, 0].real, ent[0, 0, 0].imag]
    back = load_json_record(path)
    assert back.config == rec.config and back.run_id == "abc"
    assert back.columns["norm"] == [1.0, 1 / 3]
    assert np.isnan(back.columns["norm_se"][0])
    np.testing.assert_array_equal(back.covariance["entries"], ent)


def test_unwritable_output_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match=str(blocker)):
        serialize_results(_record({"time": [0.0]}), blocker / "sub", "csv")


# -- subcommands ---------------------------------------------------------------------

def test_schrodinger_ground_state_energy_is_constant(tmp_path):
    assert main(["schrodinger", "--preset", "ground_state", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "schrodinger.csv")
    assert header == ["time", "norm", "x_mean", "p_mean", "energy", "x_variance"]
    np.testing.assert_allclose(data[:, header.index("energy")], 0.5, atol=1e-8)
    assert data[-1, 0] == pytest.approx(10.0)


def test_ensemble_dephasing_preset_sigma_decay(tmp_path):
    assert main(["ensemble", "--preset", "dephasing_ensemble", "--out", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "ensemble.csv")
    col = {name: data[:, i] for i, name in enumerate(header)}
    want = np.exp(-0.5 * 0.5**2 * col["time"])
    assert np.all(np.abs(col["sigma_norm"] - want) <= 3 * col["sigma_norm_se"] + 1e-10)
    np.testing.assert_allclose(col["sigma_reference"], want, atol=1e-10)
    np.testing.assert_allclose(col["trace"], 1.0, atol=1e-12)


def test_csv_columns_match_declared_observables(tmp_path):
    cfg = load_preset("harmonic_coherent")
    cfg.integration["n_steps"] = 20
    cfg.grid["n_points"] = 64
    rec = run_subcommand("liouville", cfg)
    header, data = read_csv(serialize_results(rec, tmp_path, "csv")[0])
    assert header[0] == "time" and len(header) == len(rec.columns)
    assert data.shape == (3, len(header))


def test_covariance_snapshots_in_csv(tmp_path):
    cfg = load_preset("harmonic_coherent")
    cfg.grid["n_points"] = 8
    cfg.grid["length"] = 8.0
    cfg.integration["n_steps"] = 4
    cfg.output["stride"] = 2
    cfg.output["covariance_snapshots"] = True
    rec = run_subcommand("liouville", cfg)
    paths = serialize_results(rec, tmp_path, "csv")
    header, data = read_csv(paths[2])
    assert header[:3] == ["time", "re_0_0", "im_0_0"] and len(header) == 1 + 2 * 64
    ent = rec.covariance["entries"]
    assert data[1, 1 + 2 * (8 * 2 + 5)] == ent[1, 2, 5].real


def test_subcommands_run_on_small_configs(tmp_path):
    cfg = defaults()
    cfg.grid.update(n_points=32, length=16.0)
    cfg.initial.update(kind="coherent", displacement=1.0)
    cfg.noise.update(kind="lowering", gamma=0.3)
    cfg.integration.update(tau=1e-3, n_steps=100, scheme="euler")
    cfg.ensemble.update(trajectories=20)
    cfg.output.update(stride=50)
    for name in ("trajectory", "ensemble", "lindblad", "liouville", "schrodinger"):
        rec = run_subcommand(name, cfg)
        assert list(rec.columns)[0] == "time"
        assert len(rec.columns["time"]) == 3
    trace = run_subcommand("lindblad", cfg).columns["trace"]
    np.testing.assert_allclose(trace, 1.0, atol=1e-12)


def test_converge_subcommand(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[grid]\nn_points = 32\nlength = 16\n[initial]\nkind = coherent\n"
                    "displacement = 1\n[noise]\nkind = dephasing\ngamma = 0.5\n"
                    "[integration]\nscheme = exact_split\n[ensemble]\ntrajectories = 10\n"
                    "[converge]\ntaus = 0.02, 0.01\nhorizon = 0.4\n")
    assert main(["converge", "--config", str(path), "--out", str(tmp_path), "--format",
                 "json"]) == 0
    doc = json.loads((tmp_path / "converge.json").read_text())
    assert list(doc["columns"]) == ["tau", "bias", "stderr"]
    assert doc["extra"]["status"] == "inconclusive"


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nn_points = 1\n")
    assert main(["trajectory", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "grid.n_points" and err["line"] == 2

    assert main(["lindblad", "--preset", "ground_state", "--out", str(tmp_path)]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "numerical" and err["module"] == "density_dynamics"

    assert main(["liouville", "--preset", "ground_state", "--threads", "0"]) == 2
    capsys.readouterr()

    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["schrodinger", "--preset", "ground_state", "--out", str(blocker)]) == 1
    assert str(blocker) in json.loads(capsys.readouterr().err)["message"]


def test_validate_failure_exit_code(tmp_path, monkeypatch, capsys):
    fake = [validation.CheckResult("ok", True, 0.0, 1.0), validation.CheckResult("bad", False, 5.0, 3.0)]
    monkeypatch.setattr(cli.validation, "default_suite", lambda *a, **k: fake)
    assert main(["validate", "--out", str(tmp_path)]) == 4
    out = capsys.readouterr().out
    assert "PASS ok" in out and "FAIL bad" in out


@pytest.mark.slow
def test_validate_default_suite_passes(tmp_path, capsys):
    assert main(["validate", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "validate.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["check", "passed", "value", "limit"]
    assert all(r[1] == "1" for r in rows[1:])
    assert "FAIL" not in capsys.readouterr().out


def test_seed_override_and_reproducible_bytes(tmp_path):
    cfg = tmp_path / "e.ini"
    cfg.write_text("[grid]\nn_points = 32\nlength = 16\n[initial]\nkind = coherent\n"
                   "displacement = 1\n[noise]\nkind = random\ngamma = 0.3\n[integration]\n"
                   "tau = 0.001\nn_steps = 200\nscheme = euler\n[ensemble]\ntrajectories = 40\n"
                   "chunk_size = 8\n[output]\nstride = 50\n")
    outs = []
    for sub, extra in (("a", []), ("b", []), ("c", ["--threads", "3"]), ("d", ["--seed", "5"])):
        assert main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / sub)] + extra) == 0
        outs.append((tmp_path / sub / "ensemble.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert outs[3] != outs[0]
    assert "base_seed = 5" in (tmp_path / "d" / "ensemble.config.ini").read_text()
