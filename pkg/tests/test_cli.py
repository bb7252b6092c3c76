import json
from pathlib import Path

import pytest

from endolab.cli import main
from endolab.config import DEFAULTS, EXPERIMENTS, ConfigError, load_config, parse_config
from endolab.report import plot, SchemaError

ROOT = Path(__file__).resolve().parent.parent


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2))
    return p


def test_experiment_order_and_defaults():
    assert EXPERIMENTS[0] == "build-family" and EXPERIMENTS[-1] == "manifold-density"
    assert set(EXPERIMENTS) == set(DEFAULTS)


def test_defaults_echoed():
    cfg = parse_config({"family": "expanding-3-2", "experiments": [{"name": "growth", "steps": 4}]})
    (name, opts), = cfg.experiments
    assert opts["steps"] == 4 and "lambda_prime" in opts
    assert cfg.effective["experiments"][0]["steps"] == 4
    assert len(cfg.hash()) == 64


@pytest.mark.parametrize(
    "doc,field",
    [
        ('{\n  "family": {"name": "expanding-3-2"},\n  "sed": 3\n}', "sed"),
        ('{\n  "family": {"name": "spiral"}\n}', "name"),
        ('{\n  "family": {"name": "expanding-3-2", "r": "small"}\n}', "r"),
        ('{\n  "family": "expanding-3-2",\n  "experiments": ["growth", "warp"]\n}', "experiments"),
        ('{\n  "family": "expanding-3-2",\n  "experiments": [{"name": "growth", "steps": -1}]\n}', "growth.steps"),
    ],
)
def test_config_errors_name_line_and_field(tmp_path, doc, field):
    with pytest.raises(ConfigError) as ei:
        load_config(_write(tmp_path, doc))
    assert ei.value.field == field
    assert ei.value.line is not None and f"line {ei.value.line}" in str(ei.value)


def test_json_syntax_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as ei:
        load_config(_write(tmp_path, '{\n  "family": "expanding-3-2",\n  "seed": ,\n}'))
    assert ei.value.line == 3


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = _write(tmp_path, {"family": "expanding-3-2", "bogus": 1})
    assert main(["run", str(p)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_no_wrap_violation_aborts(tmp_path, capsys):
    p = _write(tmp_path, {"family": {"name": "expanding-3-2", "r": 1e-5, "theta": 5e-7}, "output": "out"})
    assert main(["run", str(p)]) == 2
    assert "no-wrap" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_empty_experiment_list(tmp_path):
    p = _write(tmp_path, {"family": "saddle-3-1-1-1", "experiments": [], "output": "out"})
    assert main(["run", str(p)]) == 0
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert doc["experiments"] == [] and doc["summary"] == {"pass": 0, "fail": 0, "inconclusive": 0}


def test_small_run_outputs(tmp_path, capsys):
    p = _write(tmp_path, {
        "family": "expanding-3-2", "seed": 3, "output": "out",
        "experiments": ["build-family", {"name": "growth", "steps": 10}, "fixed-points", "intersection-constants"],
    })
    assert main(["run", str(p)]) == 0
    out = tmp_path / "out"
    names = sorted(f.name for f in out.iterdir())
    assert "01-growth.csv" in names and "01-growth.growth-curve.svg" in names and "summary.json" in names
    assert (out / "01-growth.csv").read_text().splitlines()[0] == "step,diameter,factor"
    assert (out / "02-fixed-points.csv").read_text().splitlines()[0] == "x,y,eig1,eig2,class"
    doc = json.loads((out / "summary.json").read_text())
    st = {e["name"]: e["status"] for e in doc["experiments"]}
    assert st == {"build-family": "pass", "growth": "pass", "fixed-points": "pass", "intersection-constants": "inconclusive"}
    assert doc["config"]["seed"] == 3
    assert all(k in doc["experiments"][0]["constants"] for k in ("a0", "delta0"))


def test_failed_experiment_exit_3(tmp_path):
    # lambda' above the weak rate of the map cannot be certified
    p = _write(tmp_path, {"family": "expanding-3-2", "output": "out", "experiments": [{"name": "growth", "lambda_prime": 3.5}]})
    assert main(["run", str(p)]) == 3


def test_families_listing(capsys):
    assert main(["families"]) == 0
    out = capsys.readouterr().out
    for name in ("expanding-3-2", "saddle-3-1-1-1", "nonhyp-6"):
        assert name in out
    assert "§" not in out and "Lemma" not in out


def test_plot_schema_error_names_column(tmp_path, capsys):
    p = tmp_path / "g.csv"
    p.write_text("step,diam\n0,1.0\n")
    with pytest.raises(SchemaError, match="'diameter'"):
        plot(p, "growth-curve")
    assert main(["plot", str(p), "--kind", "growth-curve"]) == 2
    assert "diameter" in capsys.readouterr().err


def test_plot_empty_csv(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    svg = Path(plot(p, "orbit-scatter"))
    assert svg.exists() and svg.read_text().startswith("<?xml")


def test_plot_deterministic(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("polyline_id,x,y\n0,0.1,0.1\n0,0.2,0.15\n0,0.1,0.2\n")
    a = Path(plot(p, "critical-set", out=tmp_path / "a.svg")).read_bytes()
    b = Path(plot(p, "critical-set", out=tmp_path / "b.svg")).read_bytes()
    assert a == b


def test_threaded_run_matches_serial(tmp_path, monkeypatch):
    doc = {"family": "saddle-3-1-1-1", "seed": 5, "experiments": ["build-family", "critical-set", "growth", "fixed-points"]}
    _write(tmp_path, dict(doc, output="serial"), "s.json")
    _write(tmp_path, dict(doc, output="threads"), "t.json")
    assert main(["run", str(tmp_path / "s.json")]) == 0
    monkeypatch.setenv("ENDOLAB_THREADS", "4")
    assert main(["run", str(tmp_path / "t.json")]) == 0
    for f in (tmp_path / "serial").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "threads" / f.name).read_bytes()
    for f in (tmp_path / "serial").glob("*.svg"):
        assert f.read_bytes() == (tmp_path / "threads" / f.name).read_bytes()


def test_canonical_configs_parse():
    for name in ("expanding", "saddle", "nonhyp"):
        cfg = load_config(ROOT / "configs" / f"{name}.json")
        assert cfg.experiments
