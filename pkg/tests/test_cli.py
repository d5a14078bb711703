import json
from pathlib import Path

import pytest
import yaml

from pharmonic import config as cfgmod
from pharmonic.cli import (EXIT_CHECK, EXIT_INCONCLUSIVE, EXIT_INVALID, EXIT_NONCONVERGED,
                           EXIT_OK, convergence_study, main, run)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def small_disk(**over):
    doc = {"command": "criterion",
           "model": {"type": "exterior_disk", "levels": [2.0, 4.0, 8.0], "n_theta": 16,
                     "rings_per_doubling": 2}}
    doc.update(over)
    return doc


def load_report(out):
    return json.loads((Path(out) / "report.json").read_text())


def test_criterion_exterior_disk(tmp_path):
    out = tmp_path / "out"
    code = main(["--config", write_config(tmp_path, small_disk()), "--out", str(out),
                 "--format", "json,csv"])
    assert code == EXIT_OK
    doc = load_report(out)
    assert doc["results"]["verdict"] == "finite-witness-found"
    # h = 1 is itself a constant witness: every capacity vanishes
    assert doc["results"]["witnesses"][0]["sequence"]["values"] == [0.0, 0.0, 0.0]
    assert doc["decision_rule"] == doc["config"]["criterion"]["rule"]
    assert (out / "report.csv").read_text().startswith("witness,level,size,capacity")


def test_criterion_zero_witness_sequence_decays(tmp_path):
    out = tmp_path / "out"
    code = main(["--config", write_config(tmp_path, small_disk()), "--out", str(out),
                 "--witness", "none"])
    assert code == EXIT_OK
    doc = load_report(out)
    assert doc["results"]["verdict"] == "finite-witness-found"
    values = doc["results"]["witnesses"][0]["sequence"]["values"]
    assert len(values) == 3 and values[0] > values[1] > values[2]


def test_report_key_order(tmp_path):
    out = tmp_path / "out"
    main(["--config", write_config(tmp_path, small_disk()), "--out", str(out)])
    keys = list(load_report(out))
    assert keys == ["tool", "version", "command", "exit_status", "config", "decision_rule",
                    "results", "timing"]


@pytest.mark.parametrize("p", ["0.5", "1"])
def test_invalid_p_writes_nothing(tmp_path, capsys, p):
    out = tmp_path / "out"
    code = main(["solve", "--config", write_config(tmp_path, small_disk()), "--p", p,
                 "--out", str(out)])
    assert code == EXIT_INVALID and not out.exists()
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    {"modle": {}},
    {"model": {"type": "torus"}},
    {"model": {"type": "mesh", "path": "/nonexistent/mesh.txt"}},
    {"output": {"formats": ["xml"]}},
    {"criterion": {"witness": "file:/nonexistent.txt"}},
    {"criterion": {"rule": {"bogus": 1}}},
])
def test_malformed_config(tmp_path, doc):
    out = tmp_path / "out"
    assert main(["--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()


def test_unreadable_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("model: [unclosed\n")
    assert main(["--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["explode"])


def test_capacity_zero_psi(tmp_path):
    out = tmp_path / "out"
    doc = {"command": "capacity", "model": {"type": "annulus", "refinement": 1},
           "capacity": {"K": "label:inner", "psi": "0"}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    res = load_report(out)["results"]
    assert res["value"] == 0.0 and "epsilon" in res and "tolerance" in res


def test_capacity_annulus_value(tmp_path):
    out = tmp_path / "out"
    doc = {"command": "capacity", "model": {"type": "annulus", "refinement": 3},
           "capacity": {"K": "label:inner", "psi": "1"}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    assert load_report(out)["results"]["value"] == pytest.approx(9.0647, rel=0.02)


def test_solve_exports_field(tmp_path):
    out = tmp_path / "out"
    code = main(["--config", str(CONFIGS / "annulus_solve.yaml"), "--out", str(out)])
    assert code == EXIT_OK
    res = load_report(out)["results"]
    assert res["converged"] and res["residual"] <= res["tol_residual"]
    assert "FIELD u" in (out / "field.txt").read_text()


def test_nonconvergence_exit(tmp_path):
    doc = {"command": "solve", "model": {"type": "annulus", "refinement": 2},
           "data": {"h": "x * y"}, "solver": {"p": 3.0, "max_iter": 1, "tol_residual": 1e-300}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(tmp_path / "o")]) \
        == EXIT_NONCONVERGED


def test_inconclusive_exit(tmp_path):
    # two levels are too few for any verdict
    doc = small_disk(model={"type": "exterior_disk", "levels": [2.0, 4.0], "n_theta": 16,
                            "rings_per_doubling": 2})
    assert main(["--config", write_config(tmp_path, doc), "--out", str(tmp_path / "o")]) \
        == EXIT_INCONCLUSIVE


def test_criterion_without_exhaustion(tmp_path):
    doc = {"command": "criterion", "model": {"type": "unit_square", "refinement": 1}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(tmp_path / "o")]) \
        == EXIT_INVALID


def test_poincare_command(tmp_path):
    out = tmp_path / "out"
    doc = {"command": "poincare", "model": {"type": "unit_square", "refinement": 4}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(out)]) == EXIT_OK
    assert load_report(out)["results"]["value"] == pytest.approx(0.1013, rel=0.05)


def study_config(levels):
    raw = cfgmod.merge(cfgmod.DEFAULTS, {"command": "study", "model": {"type": "annulus"},
                                         "study": {"levels": levels}})
    return cfgmod.validate(raw)


def test_study_single_level():
    results, times = convergence_study(study_config(1))
    assert len(results["rows"]) == 1 and results["rows"][0]["order"] == "n/a"
    assert len(times) == 1


def test_study_four_levels():
    report = run(study_config(4))
    rows = report.results["rows"]
    errs = [row["relative_error"] for row in rows]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert all(1.5 < row["order"] < 2.5 for row in rows[1:])
    times = report.timing["levels"]
    assert len(times) == 4 and times[-1] > times[0]


def test_study_needs_radial_model(tmp_path):
    doc = {"command": "study", "model": {"type": "unit_square"}}
    assert main(["--config", write_config(tmp_path, doc), "--out", str(tmp_path / "o")]) \
        == EXIT_INVALID


def test_levels_flag_maps_to_study(tmp_path):
    out = tmp_path / "out"
    code = main(["study", "--config", str(CONFIGS / "annulus_study.yaml"), "--levels", "2",
                 "--out", str(out), "--format", "csv,json"])
    assert code == EXIT_OK
    assert len(load_report(out)["results"]["rows"]) == 2
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0].endswith("wall_time") and len(lines) == 3


def test_flags_override_config(tmp_path):
    out = tmp_path / "out"
    main(["--config", write_config(tmp_path, small_disk()), "--out", str(out), "--p", "3",
          "--tol", "1e-7", "--witness", "none"])
    cfg = load_report(out)["config"]
    assert cfg["solver"]["p"] == 3.0 and cfg["solver"]["tol_residual"] == 1e-7
    assert cfg["criterion"]["witness"] == "none"


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out) == cfgmod.DEFAULTS


def test_seed_check(capsys, monkeypatch):
    assert main(["--seed-check"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)

    from pharmonic import cli
    from pharmonic.checks import CheckResult
    monkeypatch.setattr(cli, "run_checks", lambda: [CheckResult("broken", False, 1.0, 1e-9)])
    assert main(["--seed-check"]) == EXIT_CHECK


def test_reports_deterministic(tmp_path):
    out = tmp_path / "out"
    path = write_config(tmp_path, small_disk())
    texts = []
    for _ in range(2):
        assert main(["--config", path, "--out", str(out)]) == EXIT_OK
        doc = load_report(out)
        doc.pop("timing")
        texts.append(json.dumps(doc))
    assert texts[0] == texts[1]


@pytest.mark.parametrize("name", ["exterior_disk.yaml", "half_plane.yaml", "annulus_study.yaml",
                                  "annulus_solve.yaml"])
def test_shipped_configs_validate(name):
    raw = cfgmod.merge(cfgmod.DEFAULTS, cfgmod.load(CONFIGS / name))
    assert cfgmod.validate(raw).command in cfgmod.COMMANDS
