from __future__ import annotations

import json
import subprocess
import sys

import pytest

from bugscribe.cli import main
from bugscribe.execution_model import deserialize_model
from bugscribe.jsonio import read_json

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "pipeline-all" in capsys.readouterr().out


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "bugscribe", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout


def test_missing_required_model_is_usage_error(tmp_path, sample, capsys):
    code = main(["generate", "--report", str(sample / "reports" / "atimetracker-35.json"), "--out", str(tmp_path / "r.md")])
    assert code == 2
    assert "--model" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_unknown_flag_is_usage_error(capsys):
    assert main(["agree", "--a", "x", "--b", "y", "--bogus"]) == 2


def test_build_model_from_bundled_traces(tmp_path, sample, models):
    out = tmp_path / "model.json"
    assert main(["build-model", "--traces", str(sample / "apps" / "mininotes" / "traces"), "--out", str(out)]) == 0
    assert deserialize_model(read_json(out)) == models["mininotes"]
    assert out.read_text() == (sample / "apps" / "mininotes" / "model.json").read_text()
    manifest = read_json(tmp_path / "model.json.manifest.json")
    assert manifest["command"] == "build-model" and manifest["exit_status"] == 0


def test_stepwise_commands_reproduce_golden(tmp_path, sample):
    report = sample / "reports" / "atimetracker-35.json"
    model = sample / "apps" / "atimetracker" / "model.json"
    labeled, desc, ranking = tmp_path / "labeled.json", tmp_path / "desc.json", tmp_path / "ranking.json"
    assert main(["annotate", "--report", str(report), "--out", str(labeled)]) == 0
    assert main(["describe-screens", "--model", str(model), "--out", str(desc), "--jobs", "2"]) == 0
    assert main(["localize", "--labeled", str(labeled), "--model", str(model), "--descriptions", str(desc), "--out", str(ranking)]) == 0
    assert read_json(ranking)["top"] == read_json(sample / "manifest.json")["buggy_screens"]["atimetracker-35"]
    md, trace = tmp_path / "report.md", tmp_path / "trace.json"
    assert main(["generate", "--report", str(report), "--model", str(model), "--out", str(md), "--trace", str(trace)]) == 0
    assert md.read_text() == (sample / "golden" / "reports" / "atimetracker-35.md").read_text()
    assert read_json(trace)["schema"] == "bugscribe-trace/1"
    card = tmp_path / "card.json"
    gt = sample / "apps" / "atimetracker" / "ground_truth" / "atimetracker-35.json"
    args = ["evaluate", "--generated", str(md), "--ground-truth", str(gt), "--model", str(model)]
    assert main([*args, "--assessment", str(sample / "assessments" / "atimetracker-35.json"), "--out", str(card)]) == 0
    assert read_json(card) == read_json(sample / "golden" / "scorecards" / "atimetracker-35.json")
    for name in ("labeled.json", "desc.json", "ranking.json", "report.md"):
        manifest = read_json(tmp_path / f"{name}.manifest.json")
        assert manifest["live_calls"] == 0 and manifest["mode"] == "replay"


def test_pipeline_all_matches_goldens(tmp_path, sample, manifest):
    out = tmp_path / "run"
    assert main(["pipeline-all", "--out", str(out), "--jobs", "3"]) == 0
    for rid in manifest["reports"]:
        assert (out / "reports" / f"{rid}.md").read_text() == (sample / "golden" / "reports" / f"{rid}.md").read_text()
        assert read_json(out / "scorecards" / f"{rid}.json") == read_json(sample / "golden" / "scorecards" / f"{rid}.json")
    run = read_json(out / "run_manifest.json")
    assert run["exit_status"] == 0 and run["live_calls"] == 0 and run["fixture_hits"] > 0
    assert (out / "step_quality.csv").read_text().splitlines()[1] == "bugscribe,34,3,5,91.89,87.18,89.47"
    element_csv = (out / "element_quality.csv").read_text().splitlines()
    assert element_csv[0] == "Element,Approach,Correct,Incomplete,Ambiguous,Missing,Incorrect"
    assert len(element_csv) == 5
    for png in ("step_quality.png", "element_quality.png"):
        assert (out / png).read_bytes()[:8] == PNG_MAGIC
    summary = read_json(out / "summary.json")
    assert summary["elements"]["rows"] == manifest["element_counts"]


def test_aggregate_command(tmp_path, sample):
    out = tmp_path / "agg"
    assert main(["aggregate", "--scorecards", str(sample / "golden" / "scorecards"), "--out", str(out), "--approach", "BSfixture"]) == 0
    assert (out / "step_quality.csv").read_text().splitlines()[1].startswith("BSfixture,34,3,5,")
    assert (out / "run_manifest.json").exists()


def test_agree_to_stdout_and_file(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps(["x", "x", "y", "y"]))
    b.write_text(json.dumps({"labels": ["x", "y", "x", "y"]}))
    assert main(["agree", "--a", str(a), "--b", str(b)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["cohen_kappa"] == 0.0 and result["observed_agreement"] == 0.5
    assert main(["agree", "--a", str(a), "--b", str(b), "--out", str(tmp_path / "agree.json")]) == 0
    assert read_json(tmp_path / "agree.json") == result


def test_domain_error_exit_one_and_manifest_written(tmp_path, sample, capsys):
    out = tmp_path / "r.md"
    args = [
        "generate",
        "--report",
        str(sample / "reports" / "atimetracker-35.json"),
        "--model",
        str(sample / "apps" / "atimetracker" / "model.json"),
        "--fixtures",
        str(tmp_path / "empty"),
        "--out",
        str(out),
    ]
    assert main(args) == 1
    assert "annotate" in capsys.readouterr().err
    assert not out.exists()
    manifest = read_json(tmp_path / "r.md.manifest.json")
    assert manifest["exit_status"] == 1 and manifest["finished"] and manifest["live_calls"] == 0


def test_missing_input_file_is_domain_error(tmp_path):
    assert main(["annotate", "--report", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.json")]) == 1


def test_inputs_not_mutated(tmp_path, sample):
    model = sample / "apps" / "atimetracker" / "model.json"
    before = model.read_bytes()
    main(["describe-screens", "--model", str(model), "--out", str(tmp_path / "d.json")])
    assert model.read_bytes() == before


@pytest.mark.parametrize("config", ["no-info", "interactions"])
def test_unrecorded_config_fails_cleanly_in_replay(tmp_path, sample, config):
    args = [
        "generate",
        "--report",
        str(sample / "reports" / "atimetracker-35.json"),
        "--model",
        str(sample / "apps" / "atimetracker" / "model.json"),
        "--config",
        config,
        "--out",
        str(tmp_path / "r.md"),
    ]
    assert main(args) == 1
    assert read_json(tmp_path / "r.md.manifest.json")["config"]["s2r_context"] != "interactions+screens+buggy_screen"
