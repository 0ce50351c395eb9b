import json

import pytest

from dampwave import cli

BASE = """family: {kind: polynomial, params: {alpha: 1.0, beta: 0.5, gamma: 0.0, kappa: 0.625}}
grids:
  t: {start: 0.0, stop: 4.0, num: 5, spacing: linear}
  xi: {start: 0.01, stop: 1.0, num: 4, spacing: log}
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(BASE)
    return p


def test_eps_bound_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(BASE + "zones: {eps: 0.9}\n")
    assert cli.main(["zones", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "zones.eps" in err and "ZoneConfig.eps" in err


@pytest.mark.parametrize("extra,path", [
    ("grids: {t: {num: 0}}\n", "grids.t.num"),
    ("bounds: {kinds: [NoSuchKind]}\n", "bounds.kinds.0"),
    ("colour: blue\n", "<root>"),
])
def test_schema_errors_name_field(tmp_path, extra, path):
    p = tmp_path / "bad.yaml"
    p.write_text(BASE + extra)
    with pytest.raises(cli.UsageError, match=path.replace(".", r"\.").replace("<", "<")):
        cli.load_config(p)


def test_parameter_window_is_usage_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"family": {"kind": "exponential", "params": {"q": 1.5, "r": 0.5, "kappa": -0.375}}}))
    with pytest.raises(cli.UsageError, match="family.params"):
        cli.load_config(p)


def test_zones_outputs_are_deterministic_and_stamped(cfg_file, tmp_path):
    assert cli.main(["zones", "--config", str(cfg_file), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["zones", "--config", str(cfg_file), "--out", str(tmp_path / "b")]) == 0
    for name in ("zones_raster.csv", "separating_times.csv", "zones_summary.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        head = a.decode().splitlines()[0]
        assert head.startswith("# dampwave") and "config_hash=" in head and "units:" in head
    rows = cli.read_csv(tmp_path / "a" / "zones_raster.csv")
    assert len(rows) == 20 and {r["tag"] for r in rows} <= {"Hyp", "Osc", "Red", "Ell", "Diss", "Uncovered"}
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["verbs"]["zones"]["status"] == "ok"
    assert "zones_raster.csv" in man["verbs"]["zones"]["outputs"]


def test_output_root_from_environment(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["check-assumptions", "--config", str(cfg_file)]) == 0
    assert (tmp_path / "envout" / "assumptions.csv").exists()
    assert (tmp_path / "envout" / "assumptions.txt").read_text().count(": pass") == 11


def test_config_hash_ignores_output_and_jobs(cfg_file):
    c1 = cli.load_config(cfg_file)
    c2 = dict(c1, jobs=4, output={"dir": "elsewhere"})
    assert cli.config_hash(c1) == cli.config_hash(c2)
    c3 = dict(c1, horizon=300.0)
    assert cli.config_hash(c1) != cli.config_hash(c3)


def test_solve_uses_cache_and_matches_across_jobs(cfg_file, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["solve", "--config", str(cfg_file), "--out", str(out), "--tol", "1e-8"]) == 0
    first = (out / "kernels.csv").read_bytes()
    assert cli.main(["solve", "--config", str(cfg_file), "--out", str(out), "--tol", "1e-8"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["verbs"]["solve"]["result"]["cache_hit"] is True
    assert (out / "kernels.csv").read_bytes() == first
    out2 = tmp_path / "s2"
    assert cli.main(["solve", "--config", str(cfg_file), "--out", str(out2), "--tol", "1e-8", "--jobs", "2"]) == 0
    assert (out2 / "kernels.csv").read_bytes() == first


def test_report_without_inputs_is_stage_failure(cfg_file, tmp_path):
    out = tmp_path / "empty"
    assert cli.main(["report", "--config", str(cfg_file), "--out", str(out)]) == 1
    assert "no verb outputs" in (out / "logs" / "report.log").read_text()


def test_report_aggregates(cfg_file, tmp_path):
    out = tmp_path / "r"
    assert cli.main(["check-assumptions", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert cli.main(["zones", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert cli.main(["report", "--config", str(cfg_file), "--out", str(out)]) == 0
    rows = cli.read_csv(out / "summary.csv")
    assert {r["verb"] for r in rows} == {"check-assumptions", "zones"}


def test_bad_tol_flag(cfg_file, tmp_path):
    assert cli.main(["zones", "--config", str(cfg_file), "--out", str(tmp_path / "x"), "--tol", "0.5"]) == 2


def test_missing_config(tmp_path):
    assert cli.main(["zones", "--config", str(tmp_path / "nope.yaml")]) == 2
