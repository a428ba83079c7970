from __future__ import annotations

import json
from dataclasses import replace

import pytest

from stfgraph.config import DEFAULT
from stfgraph.errors import ReplayDivergence
from stfgraph.harness import episode as episode_mod
from stfgraph.harness.cli import ConfigError, main, parse_seeds
from stfgraph.harness.episode import CAUSES, EpisodeRecord, graph_hash, run_episode
from stfgraph.harness.replay import replay, replay_graph
from stfgraph.harness.suite import RunConfig, SuiteReport, arm_of, episode_filename, run_episodes

NO_CSTG = DEFAULT.with_(disable_cstg_memory=True)
NO_STF = DEFAULT.with_(disable_stf_geometry=True)


@pytest.fixture(scope="module")
def cover_top():
    return run_episode("cover-top", 2)


def test_episode_is_deterministic_modulo_timings():
    a, b = run_episode("stack-3", 5), run_episode("stack-3", 5)
    assert a.to_jsonl(with_times=False) == b.to_jsonl(with_times=False)
    assert a.success and a.cause is None


def test_record_round_trips_through_jsonl(cover_top, tmp_path):
    p = tmp_path / "r.jsonl"
    cover_top.save(p)
    back = EpisodeRecord.load(p)
    assert back.to_jsonl() == cover_top.to_jsonl()
    assert back.header["config_hash"] == cover_top.header["config_hash"]
    with pytest.raises(ValueError):
        EpisodeRecord.from_jsonl(cover_top.lines()[1])


def test_record_has_one_line_per_step_with_all_keys(cover_top):
    keys = {"step", "obs", "tokens", "executed", "violations", "prompt", "directive",
            "report", "action", "outcome", "graph", "events", "times"}
    assert [s["step"] for s in cover_top.steps] == list(range(len(cover_top.steps)))
    for s in cover_top.steps:
        assert set(s) == keys
        if s["action"] is not None:
            assert s["report"]["passed"]
    assert cover_top.final["steps"] == len(cover_top.steps)
    assert any(m.startswith("hidden:") for m in cover_top.final["marks"])


@pytest.mark.parametrize("cfg", [DEFAULT, NO_CSTG, NO_STF], ids=["full", "no-cstg", "no-stf"])
@pytest.mark.parametrize("task", ["cover-bottom", "hide-and-restore", "containers"])
def test_replay_reproduces_fresh_records(task, cfg):
    rec = EpisodeRecord.from_jsonl(run_episode(task, 1, cfg).to_jsonl())
    assert replay(rec)
    assert graph_hash(replay_graph(rec)) == rec.steps[-1]["graph"]


def test_tampered_event_is_detected_at_its_step(cover_top):
    k = next(i for i, s in enumerate(cover_top.steps) if s["events"])
    rec = EpisodeRecord.from_jsonl(cover_top.to_jsonl())
    rec.steps[k]["events"][0]["t"] += 1
    with pytest.raises(ReplayDivergence) as exc:
        replay(rec)
    assert exc.value.step == k


@pytest.mark.parametrize("cfg", [DEFAULT, NO_CSTG], ids=["full", "no-cstg"])
def test_tampered_token_is_detected_at_its_step(cfg):
    rec = run_episode("stack-3", 0, cfg)
    k = len(rec.steps) // 2
    rec.steps[k]["tokens"][0]["centroid"][0] += 0.01
    with pytest.raises(ReplayDivergence) as exc:
        replay(rec)
    assert exc.value.step == k


def test_tampered_footer_and_gaps_are_detected(cover_top):
    rec = EpisodeRecord.from_jsonl(cover_top.to_jsonl())
    rec.final["snapshot"]["step"] = -5
    with pytest.raises(ReplayDivergence):
        replay(rec)
    rec = EpisodeRecord.from_jsonl(cover_top.to_jsonl())
    del rec.steps[1]
    with pytest.raises(ReplayDivergence) as exc:
        replay(rec)
    assert exc.value.step == 1


def test_replay_rejects_action_without_passing_report(cover_top):
    rec = EpisodeRecord.from_jsonl(cover_top.to_jsonl())
    k = next(i for i, s in enumerate(rec.steps) if s["action"] is not None)
    rec.steps[k]["report"]["passed"] = False
    with pytest.raises(ReplayDivergence) as exc:
        replay(rec)
    assert exc.value.step == k


def test_safety_gate_refuses_failed_reports(monkeypatch):
    real = episode_mod.step_loop

    def broken(*args, **kw):
        out = real(*args, **kw)
        return replace(out, report=replace(out.report, passed=False, violated=(("clear(obj1)", "forged"),)))

    monkeypatch.setattr(episode_mod, "step_loop", broken)
    with pytest.raises(AssertionError):
        run_episode("stack-3", 0)


@pytest.mark.parametrize("outcome,cause", [("grasp_miss", "grasp"), ("toppled", "placement"), ("invalid", "motion")])
def test_simulator_outcomes_map_to_causes(monkeypatch, outcome, cause):
    monkeypatch.setattr(episode_mod, "apply_action", lambda w, a, sid, cfg: (w, outcome))
    rec = run_episode("stack-3", 0)
    assert not rec.success and rec.cause == cause
    assert rec.steps[-1]["outcome"] == outcome and outcome in rec.final["reason"]


def test_unmapped_subject_is_a_parsing_failure(monkeypatch):
    monkeypatch.setattr(episode_mod, "_sim_subject", lambda w, node: None)
    rec = run_episode("stack-3", 0)
    assert rec.cause == "parsing"


def test_memoryless_arm_fails_hide_and_restore_by_planning():
    rec = run_episode("hide-and-restore", 0, NO_CSTG)
    assert not rec.success and rec.cause == "planning"
    assert all(not s["events"] for s in rec.steps)


def test_every_failure_has_exactly_one_cause():
    recs = run_episodes(RunConfig(("cover-top", "stack-3"), (0, 1), pipeline=NO_STF))
    for r in recs:
        assert (r.cause is None) == r.success
        assert r.success or r.cause in CAUSES


def test_suite_report_is_a_pure_function_of_records():
    recs = run_episodes(RunConfig(("stack-3", "containers"), (0, 1)))
    recs += run_episodes(RunConfig(("containers",), (0,), pipeline=NO_CSTG))
    a = SuiteReport.from_records(recs)
    b = SuiteReport.from_records(list(reversed(recs)))
    assert a.results == b.results
    assert json.loads(a.to_json())["format"] == "suite/1"
    assert a.rate("stack-3") == 1.0 and a.results["no-cstg"]["containers"]["episodes"] == 1
    assert {arm_of(r) for r in recs} == {"full", "no-cstg"}
    assert "stack-3" in a.table() and "graph" in a.latency_table("full")
    for arm, rows in a.results.items():
        for row in rows.values():
            assert row["successes"] + sum(row["causes"].values()) == row["episodes"]


def test_worker_pool_matches_serial_run(tmp_path):
    rc = RunConfig(("stack-3",), (0, 1, 2), out_dir=str(tmp_path))
    serial = run_episodes(rc)
    pooled = run_episodes(RunConfig(("stack-3",), (0, 1, 2), workers=2))
    assert [r.to_jsonl(False) for r in serial] == [r.to_jsonl(False) for r in pooled]
    assert (tmp_path / episode_filename("stack-3", "full", 1)).exists()


def test_parse_seeds():
    assert parse_seeds("0-3,7") == (0, 1, 2, 3, 7)
    assert parse_seeds("5") == (5,)
    for bad in ("", "a-b", "1,x"):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


def test_cli_run_report_replay_export(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", "--task", "stack-3", "--seeds", "0-1", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["results"]["full"]["stack-3"]["successes"] == 2
    assert main(["report", str(out)]) == 0
    assert main(["report", "--json", "--latency", str(out)]) == 0
    assert main(["replay", str(out)]) == 0
    rec = out / episode_filename("stack-3", "full", 0)
    g = tmp_path / "g.json"
    assert main(["export-graph", str(rec), "--step", "2", "--out", str(g)]) == 0
    assert json.loads(g.read_text())["step"] == 2
    assert main(["export-graph", str(rec)]) == 0
    assert '"format": "cstg/1"' in capsys.readouterr().out


def test_cli_exit_codes_for_failures_and_bad_config(tmp_path):
    assert main(["run", "--task", "cover-top", "--ablate", "cstg", "--out", str(tmp_path)]) == 1
    assert main(["run", "--task", "nope"]) == 2
    assert main(["run", "--task", "stack-3", "--seeds", "x"]) == 2
    assert main(["run", "--task", "stack-3", "--k", "0"]) == 2
    assert main(["run", "--task", "stack-3", "--iou-threshold", "1.5"]) == 2
    assert main(["run", "--task", "stack-3", "--backend", "carrier-pigeon"]) == 2
    assert main(["run", "--task", "stack-3", "--backend", "scripted:/no/such/file"]) == 2
    assert main(["report", str(tmp_path / "empty")]) == 2
    rec = tmp_path / episode_filename("cover-top", "no-cstg", 0)
    lines = rec.read_text().splitlines()
    step = json.loads(lines[1])
    step["graph"] = "0" * 16
    lines[1] = json.dumps(step)
    rec.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(rec)]) == 1
    assert main(["export-graph", str(rec), "--step", "99"]) == 2


def test_cli_remote_backend_requires_endpoint(monkeypatch):
    monkeypatch.delenv("STFGRAPH_ENDPOINT_URL", raising=False)
    assert main(["run", "--task", "stack-3", "--backend", "remote"]) == 2


def test_cli_scripted_backend(tmp_path):
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"directives": [{"verb": "done"}]}))
    assert main(["run", "--task", "stack-3", "--backend", f"scripted:{script}"]) == 1
