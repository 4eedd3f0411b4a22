from __future__ import annotations

import argparse
import io
import json

from wfreplay.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, Settings, load_settings, main
from wfreplay.controller import read_trace
from wfreplay.scenarios import fixture_path


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


# -- validate ------------------------------------------------------------------


def test_validate_bundled_workflow():
    code, out, _ = cli("validate", "espn")
    assert code == EXIT_OK
    assert "8 states:" in out and "  playback  [end]" in out
    assert out.strip().endswith("end states: playback")


def test_validate_duplicate_names_reports_location(tmp_path):
    path = tmp_path / "dup.workflow"
    path.write_text(
        "workflow: d\napp: a\nentry: https://a.test/\n[state] x\ntrigger: t\nend: true\n[state] x\ntrigger: t\nend: true\n"
    )
    code, _, err = cli("validate", str(path))
    assert code == EXIT_FAIL
    assert err.startswith(f"{path}:7:") and "duplicate" in err


def test_validate_empty_file(tmp_path):
    path = tmp_path / "empty.workflow"
    path.write_text("")
    code, _, err = cli("validate", str(path))
    assert code == EXIT_FAIL and err


def test_validate_missing_file():
    assert cli("validate", "/nonexistent/x.workflow")[0] == EXIT_FAIL


# -- run -------------------------------------------------------------------------


def test_run_cold_then_warm_on_ten_state_fixture(tmp_path):
    repo = tmp_path / "fresh" / "repo"  # created on demand
    code, out, err = cli(
        "run", "espn10", "--sim", "espn10", "--repo", str(repo), "--tokens-per-state", "42600",
        "--runs", "2", "--trace-out", str(tmp_path / "traces"),
    )
    assert code == EXIT_OK, err
    lines = out.splitlines()
    run1 = next(line for line in lines if line.startswith("run 1 "))
    run2 = next(line for line in lines if line.startswith("run 2 "))
    assert "tokens=426000 " in run1 and "cost=$0.1491" in run1
    assert "tokens=0 " in run2 and "misses=0" in run2
    traces = sorted((tmp_path / "traces").glob("trace-espn10-*.jsonl"))
    assert len(traces) == 2
    assert {read_trace(p).seed for p in traces} == {0, 1}


def test_run_already_ended_fixture(tmp_path):
    code, out, _ = cli(
        "run", "espn_ended", "--sim", "espn_ended", "--repo", str(tmp_path / "r"), "--trace-out", str(tmp_path / "t")
    )
    assert code == EXIT_OK
    (trace_file,) = (tmp_path / "t").glob("*.jsonl")
    assert len(read_trace(trace_file).events) == 2


def test_run_abort_exits_nonzero_and_still_writes_trace(tmp_path):
    code, _, err = cli(
        "run", "espn", "--sim", "espn_paused", "--repo", str(tmp_path / "r"), "--trace-out", str(tmp_path / "t"),
        "--oracle-book", str(fixture_path("espn.oracle.json")),
    )
    assert code == EXIT_FAIL and "aborted" in err
    assert list((tmp_path / "t").glob("*.jsonl"))


def test_parallel_runs_match_sequential(tmp_path):
    args = ("run", "espn", "--sim", "espn", "--runs", "4")
    cli(*args, "--repo", str(tmp_path / "seq"))
    code, out, _ = cli(*args, "--repo", str(tmp_path / "seq"))
    code_p, out_p, _ = cli(*args, "--repo", str(tmp_path / "seq"), "--parallel", "4")
    assert code == code_p == EXIT_OK
    assert out == out_p


def test_run_config_errors():
    assert cli("run", "espn")[0] == EXIT_CONFIG  # neither --sim nor --browser
    assert cli("run", "espn", "--sim", "no-such-fixture")[0] == EXIT_CONFIG
    assert cli("run", "espn", "--sim", "espn", "--rate", "-1")[0] == EXIT_CONFIG
    assert cli("bogus")[0] == EXIT_CONFIG


def test_chat_backend_needs_key(monkeypatch, tmp_path):
    monkeypatch.delenv("NETGENT_LLM_KEY", raising=False)
    code, _, err = cli("run", "espn", "--sim", "espn", "--backend", "chat", "--llm-endpoint", "http://x", "--repo", str(tmp_path))
    assert code == EXIT_CONFIG and "NETGENT_LLM_KEY" in err


# -- drift -----------------------------------------------------------------------


def test_drift_require_pin(tmp_path):
    code, out, err = cli("drift", "espn", "--sim", "espn", "--drift", "require_pin:profiles", "--repo", str(tmp_path / "r"), "--json")
    assert code == EXIT_OK, err
    report = json.loads(out.splitlines()[-1])
    assert report["states_regenerated"] == 1
    assert report["states_replayed"] >= 3
    assert report["tokens_drift_run"] == 20_000
    assert report["tokens_cold_equivalent"] == 375_400
    assert float(report["ratio"]) <= 0.06


def test_drift_rename_id(tmp_path):
    code, out, _ = cli(
        "drift", "espn", "--sim", "espn", "--drift", "rename_id:login:#login-btn:signin-btn", "--repo", str(tmp_path / "r"), "--json"
    )
    report = json.loads(out.splitlines()[-1])
    assert code == EXIT_OK
    assert report["invalidations"] == 1 and report["states_regenerated"] == 1


def test_drift_unknown_target(tmp_path):
    code, _, err = cli("drift", "espn", "--sim", "espn", "--drift", "rename_id:login:#nope:x", "--repo", str(tmp_path / "r"))
    assert code == EXIT_FAIL and "TargetNotFound" in err


def test_drift_bad_spec(tmp_path):
    assert cli("drift", "espn", "--sim", "espn", "--drift", "melt:login", "--repo", str(tmp_path))[0] == EXIT_CONFIG


# -- cost-report -------------------------------------------------------------------


def test_cost_report_defaults():
    code, out, _ = cli("cost-report")
    assert code == EXIT_OK
    assert out.splitlines() == [
        "per_run_cost: $0.0973",
        "no_cache_total (1000000 runs): $97300.0000",
        "cold_compile: $0.1491",
        "annual_recompile_all (52 weeks): $7.7532",
        "annual_recompile_cached (1 states/week): $0.77532",
    ]


def test_cost_report_zero_runs():
    code, out, _ = cli("cost-report", "--runs", "0")
    assert code == EXIT_OK and "no_cache_total (0 runs): $0.0000" in out


def test_cost_report_rejects_negative():
    assert cli("cost-report", "--runs", "-1")[0] == EXIT_CONFIG


# -- settings precedence --------------------------------------------------------------


def _ns(**kw):
    base = dict(config=None, llm_endpoint=None, model=None, browser=None, proxy=None, repo=None, rate=None)
    base.update(kw)
    return argparse.Namespace(**base)


def test_settings_precedence(tmp_path):
    (tmp_path / "netgent.toml").write_text(
        'repo = "file-repo"\n[llm]\nendpoint = "http://file"\nmodel = "m-file"\n'
        '[browser]\nurl = "http://file-browser"\nproxy = "file:1"\n[cost]\nrate = 0.5\n'
    )
    env = {"NETGENT_BROWSER_URL": "http://env-browser"}
    s = load_settings(_ns(), env, cwd=tmp_path)
    assert s.llm_endpoint == "http://file" and s.llm_model == "m-file"
    assert s.browser_url == "http://env-browser" and s.proxy == "file:1"
    assert s.rate == "0.5" and s.repo == "file-repo"
    s = load_settings(_ns(browser="http://flag", rate="0.1"), env, cwd=tmp_path)
    assert s.browser_url == "http://flag" and s.rate == "0.1"
    assert load_settings(_ns(), {}, cwd=tmp_path / "nowhere") == Settings()


def test_bad_config_file_is_a_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("not = [valid")
    code, _, err = cli("run", "espn", "--sim", "espn", "--config", str(bad), "--repo", str(tmp_path / "r"))
    assert code == EXIT_CONFIG and "config" in err


def test_rate_from_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[cost]\nrate = "0.70"\n')
    code, out, _ = cli("run", "espn", "--sim", "espn", "--config", str(cfg), "--repo", str(tmp_path / "r"))
    assert code == EXIT_OK
    assert "tokens=355400 " in out and "cost=$0.24878 " in out
