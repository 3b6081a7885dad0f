from __future__ import annotations

import json

import pytest

from builders import button, hierarchy
from conftest import load_golden

from bugscribe.annotation import classify_heuristic, classify_sentences
from bugscribe.context import LAUNCHER_DESCRIPTION, ScreenDescription, ScreenRanking, build_catalog
from bugscribe.errors import AssemblyError, GenerationError, StageError
from bugscribe.execution_model import LAUNCHER, ExecutionModel, Interaction, Screen, validate_path
from bugscribe.gateway import FixtureStore, Gateway
from bugscribe.generation import (
    CONFIG_PRESETS,
    TITLE_MAX,
    ContextConfig,
    assemble_report,
    generate_ob_eb,
    generate_s2rs,
    normalize_title,
    run_pipeline,
)
from bugscribe.report_model import (
    SECTION_INFO,
    AtomicStep,
    BugReport,
    EbDescription,
    ObDescription,
    is_atomic,
    render_markdown,
)


class Scripted:
    """Provider answering with a fixed value per template id.

    With ``fallback_store`` set, requests that have a bundled fixture are
    answered from it, so recorded stages behave exactly as in replay.
    """

    def __init__(self, answers, fallback_store=True):
        self.answers = answers
        self.store = FixtureStore(Gateway().fixtures) if fallback_store else None
        self.requests = []

    def __call__(self, prompt, request):
        self.requests.append(request)
        stored = self.store.get(request) if self.store is not None else None
        if stored is not None:
            return stored
        answer = self.answers[request.template_id]
        return answer if isinstance(answer, str) else json.dumps(answer)


def scripted_gateway(tmp_path, answers, fallback_store=True):
    provider = Scripted(answers, fallback_store)
    gw = Gateway("live", tmp_path / "unused", provider)
    return gw, provider


# ----------------------------------------------------------- small model


@pytest.fixture
def tiny():
    a, b = Screen.build(hierarchy("A"), "Main"), Screen.build(hierarchy("B"), "Main")
    opener = Interaction.build(LAUNCHER, a.id, "open-app")
    tap = Interaction.build(a.id, b.id, "tap", button(0))
    back = Interaction.build(b.id, a.id, "back")
    model = ExecutionModel("app", {s.id: s for s in (a, b)}, (opener, tap, back), a.id)
    desc = {
        LAUNCHER: ScreenDescription(LAUNCHER, LAUNCHER_DESCRIPTION),
        a.id: ScreenDescription(a.id, "Start screen."),
        b.id: ScreenDescription(b.id, "Broken screen."),
    }
    labeled = classify_heuristic(BugReport("r", "app", "Open the app and tap the button. It crashes.", environment="Android 12, Pixel 4"))
    return {
        "model": model,
        "desc": desc,
        "labeled": labeled,
        "ranking": ScreenRanking(((b.id, "crash"),)),
        "catalog": build_catalog(model),
        "opener": opener,
        "tap": tap,
        "back": back,
    }


def _s2rs(tiny, gw, config=ContextConfig(), log=None):
    return generate_s2rs(tiny["labeled"], tiny["catalog"], tiny["desc"], tiny["ranking"], config, gw, tiny["model"], log)


def test_forced_single_path(tmp_path, tiny):
    gw, _ = scripted_gateway(tmp_path, {"s2r_interactions_screens_buggy": {"steps": [tiny["tap"].id]}}, False)
    steps = _s2rs(tiny, gw)
    # open-app is prepended as step 1; the single forced interaction follows
    assert [s.interaction_id for s in steps] == [tiny["opener"].id, tiny["tap"].id]
    assert steps[-1].target_screen == tiny["ranking"].top
    assert [s.ordinal for s in steps] == [1, 2]


def test_dict_style_answers_accepted(tmp_path, tiny):
    answer = {"steps": [{"interaction_id": tiny["opener"].id}, {"id": tiny["tap"].id}]}
    gw, _ = scripted_gateway(tmp_path, {"s2r_interactions_screens_buggy": answer}, False)
    assert len(_s2rs(tiny, gw)) == 2


def test_unknown_id_triggers_one_repair(tmp_path, tiny):
    answers = {"s2r_interactions_screens_buggy": {"steps": ["e000000000000"]}, "repair": {"steps": [tiny["tap"].id]}}
    gw, provider = scripted_gateway(tmp_path, answers, False)
    log = []
    steps = _s2rs(tiny, gw, log=log)
    assert [s for s, _ in log] == ["s2r", "repair:s2r"]
    repair = provider.requests[-1]
    assert "e000000000000" in repair.bindings["violation"]
    assert repair.bindings["previous_answer"] == json.dumps({"steps": ["e000000000000"]})
    assert steps[-1].interaction_id == tiny["tap"].id


def test_persistent_failure_carries_sequence(tmp_path, tiny):
    bad = {"steps": [tiny["back"].id]}
    gw, _ = scripted_gateway(tmp_path, {"s2r_interactions_screens_buggy": bad, "repair": bad}, False)
    with pytest.raises(GenerationError) as err:
        _s2rs(tiny, gw)
    assert err.value.sequence == [tiny["back"].id]


def test_path_must_end_on_ranked_screen(tmp_path, tiny):
    answers = {
        "s2r_interactions_screens_buggy": {"steps": [tiny["opener"].id]},
        "repair": {"steps": [tiny["opener"].id, tiny["tap"].id]},
    }
    gw, provider = scripted_gateway(tmp_path, answers, False)
    steps = _s2rs(tiny, gw)
    assert "buggy screen" in provider.requests[-1].bindings["violation"]
    assert steps[-1].target_screen == tiny["ranking"].top


def test_interactions_only_config_does_not_force_buggy_screen(tmp_path, tiny):
    gw, provider = scripted_gateway(tmp_path, {"s2r_interactions": {"steps": [tiny["opener"].id]}}, False)
    steps = _s2rs(tiny, gw, CONFIG_PRESETS["interactions"])
    assert len(steps) == 1
    assert set(provider.requests[0].bindings) == {"bug_report", "interactions"}


def test_no_info_config_gives_free_text(tmp_path, tiny):
    gw, provider = scripted_gateway(tmp_path, {"s2r_none": {"steps": ["1. Open the app", "Tap the button"]}}, False)
    steps = _s2rs(tiny, gw, CONFIG_PRESETS["no-info"])
    assert [s.text for s in steps] == ["Open the app", "Tap the button"]
    assert all(s.interaction_id is None for s in steps)
    assert set(provider.requests[0].bindings) == {"bug_report"}


def test_steps_inferred_without_s2r_sentences(tmp_path, tiny):
    labeled = classify_heuristic(BugReport("r", "app", "The screen is broken."))
    assert not labeled.has("S2R")
    gw, _ = scripted_gateway(tmp_path, {"s2r_interactions_screens_buggy": {"steps": [tiny["tap"].id]}}, False)
    steps = generate_s2rs(labeled, tiny["catalog"], tiny["desc"], tiny["ranking"], ContextConfig(), gw, tiny["model"])
    assert steps[-1].target_screen == tiny["ranking"].top


# ------------------------------------------------------------------ OB / EB

OBEB_ANSWER = {
    "title": "Crash on the broken screen",
    "ob": {"buggy_behavior": "the app crashes", "buggy_screen_reference": "the broken screen", "triggering_interaction": "taps the button"},
    "eb": {"intended_behavior": "open the screen instead of crashing"},
}


def _obeb(tiny, gw, steps=None):
    steps = steps or [AtomicStep.grounded(1, tiny["opener"]), AtomicStep.grounded(2, tiny["tap"])]
    return generate_ob_eb(tiny["labeled"], steps, tiny["ranking"], tiny["desc"], ContextConfig(), gw)


def test_obeb_elements_and_environment(tmp_path, tiny):
    gw, provider = scripted_gateway(tmp_path, {"obeb_s2rs_buggy_screen_screens": OBEB_ANSWER}, False)
    title, ob, eb, info = _obeb(tiny, gw)
    assert title == "Crash on the broken screen"
    assert ob.rendered == "On the broken screen, if the user taps the button, the app crashes."
    assert eb.rendered == "The app should open the screen instead of crashing."
    assert info == "Android 12, Pixel 4"
    bindings = provider.requests[0].bindings
    assert "2. tap 'B0' button (from" in bindings["s2rs"]
    assert bindings["step_screens"].splitlines()[0].endswith("Start screen.")


def test_no_environment_means_no_additional_info(tmp_path, tiny):
    tiny["labeled"] = classify_heuristic(BugReport("r", "app", "Tap the button. It crashes."))
    gw, _ = scripted_gateway(tmp_path, {"obeb_s2rs_buggy_screen_screens": OBEB_ANSWER}, False)
    assert _obeb(tiny, gw)[3] is None


def test_missing_element_repaired_then_fails(tmp_path, tiny):
    broken = {**OBEB_ANSWER, "ob": {**OBEB_ANSWER["ob"], "triggering_interaction": ""}}
    gw, provider = scripted_gateway(tmp_path, {"obeb_s2rs_buggy_screen_screens": broken, "repair": OBEB_ANSWER}, False)
    assert _obeb(tiny, gw)[1].triggering_interaction == "taps the button"
    assert "ob.triggering_interaction" in provider.requests[-1].bindings["violation"]
    gw, _ = scripted_gateway(tmp_path, {"obeb_s2rs_buggy_screen_screens": broken, "repair": broken}, False)
    with pytest.raises(GenerationError):
        _obeb(tiny, gw)


def test_explicit_negative_modal(tmp_path, tiny):
    answer = {**OBEB_ANSWER, "eb": {"subject": "the screen", "modal": "shouldn't", "intended_behavior": "crash"}}
    gw, _ = scripted_gateway(tmp_path, {"obeb_s2rs_buggy_screen_screens": answer}, False)
    assert _obeb(tiny, gw)[2].rendered == "The screen shouldn't crash."


def test_title_normalization():
    long = "word " * 60
    title = normalize_title(long + "\nsecond line")
    assert len(title) <= TITLE_MAX and "\n" not in title and title.endswith("...")
    assert normalize_title("  Short   title ") == "Short title"


# ----------------------------------------------------------------- assembly


def _parts():
    ob = ObDescription.from_elements("it crashes", "the list", "taps 'Add'")
    eb = EbDescription.from_parts("the app", "should", "add the item")
    return "Crash", ob, eb


def test_assemble_renumbers_and_renders_in_order():
    title, ob, eb = _parts()
    report = assemble_report(title, ob, eb, [AtomicStep(7, "open the app"), AtomicStep(9, "tap 'Add' button")], "Android 9")
    assert [s.ordinal for s in report.steps] == [1, 2]
    text = render_markdown(report)
    assert text == render_markdown(assemble_report(title, ob, eb, report.steps, "Android 9"))
    assert text.index("# Crash") < text.index(ob.rendered) < text.index(eb.rendered) < text.index("1. open") < text.index("Android 9")


def test_assemble_without_info_has_four_sections():
    text = render_markdown(assemble_report(*_parts(), [AtomicStep(1, "open the app")]))
    assert SECTION_INFO not in text
    assert sum(line.startswith("#") for line in text.splitlines()) == 4


def test_assemble_rejects_empty_steps():
    with pytest.raises(AssemblyError):
        assemble_report(*_parts(), [])
    # titles are normalized to one line rather than rejected
    assert assemble_report("two\nlines", *_parts()[1:], [AtomicStep(1, "open the app")]).title == "two lines"


# ------------------------------------------------------------------ pipeline


def test_restore_crash_steps_end_on_restore(reports, models, manifest):
    generated, trace = run_pipeline(reports["atimetracker-35"], models["atimetracker"])
    last = generated.steps[-1]
    assert last.text == "tap 'Restore from backup' menu item"
    assert last.target_screen == manifest["buggy_screens"]["atimetracker-35"] == trace.buggy_screen
    assert generated.steps[0].text == "open the app"
    assert "'Restore from backup'" in generated.ob.triggering_interaction
    assert "popup" in generated.ob.buggy_screen_reference
    assert "crash" in generated.ob.buggy_behavior
    assert "should" in generated.eb.rendered and "instead of crashing" in generated.eb.rendered


@pytest.mark.parametrize("rid", sorted(load_golden("../manifest.json")["reports"]))
def test_pipeline_matches_golden_markdown(rid, reports, models):
    report = reports[rid]
    generated, trace = run_pipeline(report, models[report.app_id])
    assert render_markdown(generated) == load_golden(f"reports/{rid}.md")
    again, trace2 = run_pipeline(report, models[report.app_id], jobs=1)
    assert again == generated and trace2.to_json() == trace.to_json()


def test_pipeline_invariants_on_bundled_reports(reports, models):
    for report in reports.values():
        model = models[report.app_id]
        generated, trace = run_pipeline(report, model)
        assert validate_path(model, [s.interaction_id for s in generated.steps]).valid
        assert generated.steps[-1].target_screen == trace.buggy_screen
        assert all(is_atomic(s.text) for s in generated.steps)
        stages = [s for s, _ in trace.requests]
        assert stages.count("s2r") == 1 and stages.count("obeb") == 1
        assert len(trace.requests) == len(set(trace.requests)) or "repair:s2r" in stages


def test_no_info_config_skips_context_stages(tmp_path, reports, models):
    gw, _ = scripted_gateway(
        tmp_path,
        {
            "s2r_none": {"steps": ["Open the app", "Open the menu", "Tap Restore from backup"]},
            "obeb_none": {
                "title": "Crash on restore",
                "ob": {"buggy_behavior": "the app crashes", "buggy_screen_reference": "the menu", "triggering_interaction": "taps restore"},
                "eb": {"intended_behavior": "restore the backup"},
            },
        },
    )
    generated, trace = run_pipeline(reports["atimetracker-35"], models["atimetracker"], CONFIG_PRESETS["no-info"], gw)
    stages = [s for s, _ in trace.requests]
    assert stages == ["annotate", "s2r", "obeb"]
    assert trace.buggy_screen is None
    assert all(s.interaction_id is None for s in generated.steps)
    assert trace.inputs == {"s2r": ["bug_report"], "obeb": ["bug_report"]}


def test_distinct_configs_give_distinct_keys(tmp_path, reports, models, att):
    report = reports["atimetracker-35"]
    _, default_trace = run_pipeline(report, att)
    gw, _ = scripted_gateway(
        tmp_path,
        {"s2r_interactions": {"steps": [s.interaction_id for s in run_pipeline(report, att)[0].steps]}},
    )
    _, other_trace = run_pipeline(report, att, CONFIG_PRESETS["interactions"], gw)
    assert default_trace.keys("s2r") != other_trace.keys("s2r")
    assert default_trace.keys("annotate") == other_trace.keys("annotate")


def test_app_mismatch_is_input_stage_error(reports, models):
    with pytest.raises(StageError) as err:
        run_pipeline(reports["atimetracker-35"], models["mininotes"])
    assert err.value.stage == "input"


def test_first_failing_stage_is_named(tmp_path, reports, att):
    with pytest.raises(StageError) as err:
        run_pipeline(reports["atimetracker-35"], att, gateway=Gateway(fixtures=tmp_path))
    assert err.value.stage == "annotate"


def test_trace_json_shape(reports, att):
    _, trace = run_pipeline(reports["atimetracker-35"], att)
    doc = trace.to_json()
    assert doc["schema"] == "bugscribe-trace/1"
    assert doc["config"] == ContextConfig().to_json()
    assert [r["stage"] for r in doc["requests"]][0] == "annotate"
    assert doc["buggy_screen"] == trace.buggy_screen


def test_config_validation():
    with pytest.raises(ValueError):
        ContextConfig("screens")
    assert ContextConfig() == CONFIG_PRESETS["default"]
    assert not CONFIG_PRESETS["no-info"].needs_descriptions
