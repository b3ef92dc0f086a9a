import csv
import io
import json

import pytest

from kkcheck import cli, report
from kkcheck.geometry import ConsistencyError

KEYS = ["suite", "group", "seed", "checks", "wall_ms", "version"]


def run(*args):
    """Exit status whether main returns it or argparse raises SystemExit."""
    try:
        return cli.main(list(args))
    except SystemExit as exc:
        return exc.code


def test_lie_suite_passes():
    rep = report.run_suite(report.SuiteConfig("lie", "su2", 42))
    names = [c.name for c in rep.checks]
    assert names == ["lie_jacobi", "lie_unimodularity", "lie_ad_invariance", "lie_killing"]
    assert rep.passed
    assert rep.checks[-1].extra["killing_contraction"] == -3.0


def test_variational_suite_has_vacuum_residual():
    rep = report.run_suite(report.SuiteConfig("variational", "su2", 7))
    vac = next(c for c in rep.checks if c.name == "eym_vacuum_residual")
    assert vac.max_residual <= 1e-7 and vac.passed


def test_pass_flag_matches_tolerance():
    rep = report.run_suite(report.SuiteConfig("geometry", "u1", 3))
    for c in rep.checks:
        assert c.passed == (c.max_residual <= c.tolerance)


def test_same_config_same_bytes(capsys):
    texts = []
    for _ in range(2):
        assert run("suite", "forms", "--seed", "5", "--samples", "8") == 0
        d = json.loads(capsys.readouterr().out)
        d.pop("wall_ms")
        texts.append(json.dumps(d))
    assert texts[0] == texts[1]


def test_seed_changes_residuals():
    a = report.run_suite(report.SuiteConfig("forms", seed=1, samples=4))
    b = report.run_suite(report.SuiteConfig("forms", seed=2, samples=4))
    assert [c.max_residual for c in a.checks] != [c.max_residual for c in b.checks]


def test_check_rng_is_keyed_by_name():
    a = report.check_rng(2 ** 64 - 1, "x").random(3)
    assert (a == report.check_rng(2 ** 64 - 1, "x").random(3)).all()
    assert not (a == report.check_rng(2 ** 64 - 1, "y").random(3)).all()


def test_json_schema_and_round_trip(tmp_path):
    out = tmp_path / "r.json"
    assert run("suite", "lie", "--group", "u1", "--out", str(out)) == 0
    d = json.loads(out.read_text())
    assert list(d) == KEYS
    assert d["suite"] == "lie" and d["group"] == "u1" and d["seed"] == 0
    assert list(d["checks"][0]) == ["name", "max_residual", "tolerance", "pass", "extra"]
    assert d["version"] == report.__version__
    rep = report.run_suite(report.SuiteConfig("lie", "u1"))
    again = json.loads(report.report_json(rep))
    again["wall_ms"] = d["wall_ms"]
    assert again == d


def test_empty_extra_serializes():
    rep = report.CheckReport("lie", "su2", 0, [report.CheckResult("x", 0.0, 1.0, True)], 1)
    assert json.loads(report.report_json(rep))["checks"][0]["extra"] == {}
    assert '"extra": {}' in report.report_json(rep)


def test_csv_rows(tmp_path):
    out = tmp_path / "r.csv"
    assert run("suite", "lie", "--format", "csv", "--out", str(out)) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["name", "max_residual", "tolerance", "pass"]
    assert len(rows) - 1 == len(report.suite_checks("lie", "su2"))
    assert all(r[3] == "true" for r in rows[1:])


@pytest.mark.parametrize("args", [
    ("suite", "nope"),
    ("suite", "lie", "--group", "su3"),
    ("suite", "lie", "--tol", "0"),
    ("suite", "lie", "--samples", "0"),
    ("suite", "lie", "--seed", "-1"),
    ("suite", "lie", "--format", "xml"),
    ("suite", "lie", "--threads", "0"),
    (),
])
def test_usage_errors(args, capsys):
    assert run(*args) == cli.EXIT_USAGE


def test_failing_tolerance_exit(capsys):
    assert run("suite", "geometry", "--group", "u1", "--tol", "1e-300", "--samples", "2") == cli.EXIT_FAIL
    d = json.loads(capsys.readouterr().out)
    assert not all(c["pass"] for c in d["checks"])


def test_consistency_exit(monkeypatch, capsys):
    def broken(cfg, alg, rng):
        raise ConsistencyError("Palatini contraction disagrees")
    monkeypatch.setattr(report, "REGISTRY", [report.Check("geometry_palatini", "lie", 1.0, broken)])
    assert run("suite", "lie") == cli.EXIT_CONSISTENCY
    assert "geometry_palatini" in capsys.readouterr().err


def test_io_exit(tmp_path):
    assert run("suite", "lie", "--out", str(tmp_path / "missing" / "r.json")) == cli.EXIT_IO


def test_threads_do_not_change_output(capsys):
    outs = []
    for t in ("1", "3"):
        assert run("suite", "fibration", "--group", "u1", "--samples", "3", "--threads", t) == 0
        d = json.loads(capsys.readouterr().out)
        d.pop("wall_ms")
        outs.append(d)
    assert outs[0] == outs[1]
