from __future__ import annotations

import json
from pathlib import Path

import pytest

from bugscribe.data import sample_root
from bugscribe.execution_model import deserialize_model
from bugscribe.jsonio import read_json
from bugscribe.report_model import parse_ground_truth, parse_report

SAMPLE = sample_root()


@pytest.fixture(scope="session")
def sample() -> Path:
    return SAMPLE


@pytest.fixture(scope="session")
def manifest() -> dict:
    return read_json(SAMPLE / "manifest.json")


@pytest.fixture(scope="session")
def models() -> dict:
    return {p.name: deserialize_model(read_json(p / "model.json")) for p in sorted((SAMPLE / "apps").iterdir())}


@pytest.fixture(scope="session")
def reports() -> dict:
    return {p.stem: parse_report(read_json(p)) for p in sorted((SAMPLE / "reports").glob("*.json"))}


@pytest.fixture(scope="session")
def ground_truth(models, reports) -> dict:
    out = {}
    for rid, report in reports.items():
        path = SAMPLE / "apps" / report.app_id / "ground_truth" / f"{rid}.json"
        out[rid] = parse_ground_truth(read_json(path), models[report.app_id])
    return out


@pytest.fixture
def att(models):
    return models["atimetracker"]


def load_golden(name: str):
    path = SAMPLE / "golden" / name
    return json.loads(path.read_text()) if path.suffix == ".json" else path.read_text()


_CRITERIA: dict[str, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__ != "test_acceptance" or not item.function.__doc__:
        return
    label = item.function.__doc__.strip().splitlines()[0]
    if rep.when == "call" or rep.failed:
        _CRITERIA[label] = (label, rep.passed and _CRITERIA.get(label, (label, True))[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in sorted(_CRITERIA.values()):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {label}")
