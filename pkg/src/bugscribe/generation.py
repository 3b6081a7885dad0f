"""Grounded S2R generation, OB/EB generation and report assembly."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .annotation import LabeledReport, annotation_request, classify_sentences
from .context import (
    InteractionCatalog,
    ScreenDescription,
    ScreenRanking,
    build_catalog,
    describe_all,
    format_descriptions,
    localize_buggy_screen,
)
from .errors import AppMismatchError, AssemblyError, BugscribeError, GenerationError, StageError
from .execution_model import LAUNCHER, ExecutionModel, validate_path
from .gateway import CompletionRequest, CompletionResult, Gateway, fixture_key
from .report_model import AtomicStep, BugReport, EbDescription, GeneratedReport, ObDescription

logger = logging.getLogger(__name__)

TRACE_SCHEMA_ID = "bugscribe-trace/1"
TITLE_MAX = 100

S2R_TEMPLATES = {
    "none": "s2r_none",
    "interactions": "s2r_interactions",
    "interactions+screens": "s2r_interactions_screens",
    "interactions+screens+buggy_screen": "s2r_interactions_screens_buggy",
}
OBEB_TEMPLATES = {
    "none": "obeb_none",
    "buggy_screen": "obeb_buggy_screen",
    "s2rs+buggy_screen": "obeb_s2rs_buggy_screen",
    "s2rs+buggy_screen+screens": "obeb_s2rs_buggy_screen_screens",
}


@dataclass(frozen=True)
class ContextConfig:
    """Which app context each generation stage sees. Defaults are the best development-set pair."""

    s2r_context: str = "interactions+screens+buggy_screen"
    obeb_context: str = "s2rs+buggy_screen+screens"

    def __post_init__(self) -> None:
        if self.s2r_context not in S2R_TEMPLATES:
            raise ValueError(f"unknown S2R context {self.s2r_context!r}")
        if self.obeb_context not in OBEB_TEMPLATES:
            raise ValueError(f"unknown OB/EB context {self.obeb_context!r}")

    @property
    def s2r_parts(self) -> set[str]:
        return set() if self.s2r_context == "none" else set(self.s2r_context.split("+"))

    @property
    def obeb_parts(self) -> set[str]:
        return set() if self.obeb_context == "none" else set(self.obeb_context.split("+"))

    @property
    def grounded(self) -> bool:
        return "interactions" in self.s2r_parts

    @property
    def needs_ranking(self) -> bool:
        return "buggy_screen" in self.s2r_parts or "buggy_screen" in self.obeb_parts

    @property
    def needs_descriptions(self) -> bool:
        return self.needs_ranking or "screens" in self.s2r_parts or "screens" in self.obeb_parts

    def to_json(self) -> dict[str, str]:
        return {"s2r_context": self.s2r_context, "obeb_context": self.obeb_context}


CONFIG_PRESETS = {
    "default": ContextConfig(),
    "no-info": ContextConfig("none", "none"),
    "interactions": ContextConfig("interactions", "s2rs+buggy_screen+screens"),
    "interactions+screens": ContextConfig("interactions+screens", "s2rs+buggy_screen+screens"),
}


@dataclass
class GenerationTrace:
    config: ContextConfig
    report_id: str = ""
    requests: list[tuple[str, str]] = field(default_factory=list)
    inputs: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    buggy_screen: str | None = None

    def keys(self, stage_prefix: str = "") -> list[str]:
        return [k for stage, k in self.requests if stage.startswith(stage_prefix)]

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": TRACE_SCHEMA_ID,
            "report_id": self.report_id,
            "config": self.config.to_json(),
            "buggy_screen": self.buggy_screen,
            "inputs": {k: list(v) for k, v in sorted(self.inputs.items())},
            "requests": [{"stage": s, "key": k} for s, k in self.requests],
            "warnings": list(self.warnings),
        }


def _complete(gateway: Gateway, request: CompletionRequest, stage: str, log: list | None) -> CompletionResult:
    result = gateway.complete(request)
    if log is not None:
        log.append((stage, result.key))
    return result


def _repair(
    gateway: Gateway, request: CompletionRequest, previous: CompletionResult, violation: str, stage: str, log
) -> CompletionResult:
    logger.info("%s answer rejected (%s); re-prompting once", stage, violation)
    fix = CompletionRequest(
        "repair",
        {
            "original_prompt": gateway.prompt(request),
            "previous_answer": previous.raw_text,
            "violation": violation,
        },
        expected_format=request.expected_format,
    )
    return _complete(gateway, fix, f"repair:{stage}", log)


# ---------------------------------------------------------------- S2R stage


def _screen_line(sid: str, descriptions: Mapping[str, ScreenDescription]) -> str:
    text = descriptions[sid].text if sid in descriptions else "(no description)"
    return f"{sid}: {text}"


def s2r_request(
    labeled: LabeledReport,
    catalog: InteractionCatalog,
    descriptions: Mapping[str, ScreenDescription] | None,
    ranking: ScreenRanking | None,
    config: ContextConfig,
) -> CompletionRequest:
    parts = config.s2r_parts
    bindings = {"bug_report": labeled.formatted()}
    if "interactions" in parts:
        bindings["interactions"] = catalog.formatted()
    if "screens" in parts:
        bindings["screens"] = format_descriptions(descriptions)
    if "buggy_screen" in parts:
        bindings["buggy_screen"] = _screen_line(ranking.top, descriptions)
    return CompletionRequest(S2R_TEMPLATES[config.s2r_context], bindings)


def _step_list(parsed: Any) -> list:
    if isinstance(parsed, dict):
        parsed = parsed.get("steps")
    if not isinstance(parsed, list) or not parsed:
        raise ValueError('expected {"steps": [...]} with at least one step')
    return parsed


def _ground(
    parsed: Any,
    model: ExecutionModel,
    catalog: InteractionCatalog,
    ranking: ScreenRanking | None,
    config: ContextConfig,
) -> list[str]:
    """Check a grounded answer; returns interaction ids or raises ValueError describing the violation."""
    ids = _step_list(parsed)
    ids = [i.get("interaction_id", i.get("id")) if isinstance(i, dict) else i for i in ids]
    unknown = [i for i in ids if not isinstance(i, str) or i not in catalog.ids]
    if unknown:
        raise ValueError(f"interaction ids not in the catalog: {unknown}")
    opener = model.open_app
    first = model.interaction(ids[0])
    if opener is not None and first.action != "open-app" and first.source == model.initial_screen:
        ids = [opener.id, *ids]
    check = validate_path(model, ids)
    if not check.valid:
        raise ValueError(f"step {check.index + 1} breaks the path: {check.reason}")
    if "buggy_screen" in config.s2r_parts and model.interaction(ids[-1]).target != ranking.top:
        raise ValueError(f"the last step must end on the buggy screen {ranking.top}")
    return ids


def _free_text(parsed: Any) -> list[str]:
    steps = []
    for item in _step_list(parsed):
        text = item.get("text") if isinstance(item, dict) else item
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"step {len(steps) + 1} is not a non-empty string")
        steps.append(re.sub(r"^\s*\d+[.)]\s*", "", text.strip()))
    return steps


def generate_s2rs(
    labeled: LabeledReport,
    catalog: InteractionCatalog,
    descriptions: Mapping[str, ScreenDescription] | None,
    ranking: ScreenRanking | None,
    config: ContextConfig,
    gateway: Gateway,
    model: ExecutionModel,
    log: list | None = None,
) -> list[AtomicStep]:
    """Ask for a reproduction path and synthesize atomic steps from it.

    With interactions in context the model answers with interaction ids; the
    path is validated mechanically and step text is produced locally. One
    corrective re-prompt is allowed before failing.
    """
    request = s2r_request(labeled, catalog, descriptions, ranking, config)
    result = _complete(gateway, request, "s2r", log)
    for attempt in range(2):
        try:
            if config.grounded:
                ids = _ground(result.parsed, model, catalog, ranking, config)
                return [AtomicStep.grounded(i, model.interaction(sid)) for i, sid in enumerate(ids, 1)]
            return [AtomicStep(i, text) for i, text in enumerate(_free_text(result.parsed), 1)]
        except ValueError as exc:
            if attempt == 1:
                seq = result.parsed.get("steps") if isinstance(result.parsed, dict) else result.parsed
                raise GenerationError(f"S2R answer rejected after re-prompt: {exc}", seq) from None
            result = _repair(gateway, request, result, str(exc), "s2r", log)
    raise AssertionError("unreachable")


# -------------------------------------------------------------- OB/EB stage


def _steps_block(steps: Sequence[AtomicStep]) -> str:
    lines = []
    for s in steps:
        where = f" (from {s.source_screen} to {s.target_screen})" if s.interaction_id else ""
        lines.append(f"{s.ordinal}. {s.text}{where}")
    return "\n".join(lines)


def _step_screens(steps: Sequence[AtomicStep]) -> list[str]:
    seen: list[str] = []
    for s in steps:
        for sid in (s.source_screen, s.target_screen):
            if sid and sid != LAUNCHER and sid not in seen:
                seen.append(sid)
    return seen


def obeb_request(
    labeled: LabeledReport,
    steps: Sequence[AtomicStep],
    ranking: ScreenRanking | None,
    descriptions: Mapping[str, ScreenDescription] | None,
    config: ContextConfig,
) -> CompletionRequest:
    parts = config.obeb_parts
    bindings = {"bug_report": labeled.formatted()}
    if "buggy_screen" in parts:
        bindings["buggy_screen"] = _screen_line(ranking.top, descriptions)
    if "s2rs" in parts:
        bindings["s2rs"] = _steps_block(steps)
    if "screens" in parts:
        ids = _step_screens(steps)
        bindings["step_screens"] = "\n".join(_screen_line(s, descriptions) for s in ids) or "(none)"
    return CompletionRequest(OBEB_TEMPLATES[config.obeb_context], bindings)


def normalize_title(title: str) -> str:
    title = re.sub(r"\s+", " ", title).strip()
    if len(title) > TITLE_MAX:
        title = title[: TITLE_MAX - 3].rsplit(" ", 1)[0].rstrip(" ,;:") + "..."
    return title


def _obeb_parts(parsed: Any) -> tuple[str, ObDescription, EbDescription]:
    if not isinstance(parsed, dict):
        raise ValueError("expected a JSON object with title, ob and eb")
    ob, eb = parsed.get("ob") or {}, parsed.get("eb") or {}
    need = {
        "ob.buggy_behavior": ob.get("buggy_behavior"),
        "ob.buggy_screen_reference": ob.get("buggy_screen_reference"),
        "ob.triggering_interaction": ob.get("triggering_interaction"),
        "eb.intended_behavior": eb.get("intended_behavior"),
    }
    missing = [k for k, v in need.items() if not isinstance(v, str) or not v.strip()]
    if missing:
        raise ValueError(f"missing elements: {', '.join(missing)}")
    ob_desc = ObDescription.from_elements(ob["buggy_behavior"], ob["buggy_screen_reference"], ob["triggering_interaction"])
    eb_desc = EbDescription.from_parts(eb.get("subject") or "the app", eb.get("modal") or "should", eb["intended_behavior"])
    title = normalize_title(str(parsed.get("title") or "")) or normalize_title(ob_desc.buggy_behavior)
    return title, ob_desc, eb_desc


def generate_ob_eb(
    labeled: LabeledReport,
    steps: Sequence[AtomicStep],
    ranking: ScreenRanking | None,
    descriptions: Mapping[str, ScreenDescription] | None,
    config: ContextConfig,
    gateway: Gateway,
    log: list | None = None,
) -> tuple[str, ObDescription, EbDescription, str | None]:
    request = obeb_request(labeled, steps, ranking, descriptions, config)
    result = _complete(gateway, request, "obeb", log)
    for attempt in range(2):
        try:
            title, ob, eb = _obeb_parts(result.parsed)
            break
        except ValueError as exc:
            if attempt == 1:
                raise GenerationError(f"OB/EB answer rejected after re-prompt: {exc}") from None
            result = _repair(gateway, request, result, str(exc), "obeb", log)
    info = labeled.report.environment.strip() if labeled.report.environment else None
    return title, ob, eb, info or None


def assemble_report(
    title: str,
    ob: ObDescription,
    eb: EbDescription,
    steps: Sequence[AtomicStep],
    additional_info: str | None = None,
) -> GeneratedReport:
    if not steps:
        raise AssemblyError("cannot assemble a report without steps")
    numbered = tuple(
        AtomicStep(i, s.text, s.interaction_id, s.source_screen, s.target_screen) for i, s in enumerate(steps, 1)
    )
    try:
        return GeneratedReport(normalize_title(title), ob, eb, numbered, additional_info or None)
    except ValueError as exc:
        raise AssemblyError(str(exc)) from exc


# ---------------------------------------------------------------- pipeline


def run_pipeline(
    report: BugReport,
    model: ExecutionModel,
    config: ContextConfig | None = None,
    gateway: Gateway | None = None,
    *,
    jobs: int = 4,
) -> tuple[GeneratedReport, GenerationTrace]:
    """annotate -> describe -> catalog -> localize -> S2Rs -> OB/EB -> assemble."""
    config = config or ContextConfig()
    gateway = gateway or Gateway()
    trace = GenerationTrace(config, report.report_id)
    log = trace.requests
    if model.app_id != report.app_id:
        raise StageError("input", AppMismatchError(f"report is for {report.app_id!r}, model for {model.app_id!r}"))

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BugscribeError as exc:
            raise StageError(name, exc) from exc
        except (ValueError, KeyError) as exc:
            raise StageError(name, exc) from exc

    labeled = stage("annotate", classify_sentences, report, gateway)
    log.append(("annotate", fixture_key(annotation_request(report))))
    descriptions = stage("describe", describe_all, model, gateway, jobs, log) if config.needs_descriptions else None
    catalog = stage("catalog", build_catalog, model)
    ranking = None
    if config.needs_ranking:
        ranking = stage("localize", localize_buggy_screen, labeled, descriptions, catalog, gateway, log)
        trace.warnings.extend(ranking.warnings)
        trace.buggy_screen = ranking.top
    trace.inputs["s2r"] = ["bug_report", *sorted(config.s2r_parts)]
    trace.inputs["obeb"] = ["bug_report", *sorted(config.obeb_parts)]

    steps = stage("s2r", generate_s2rs, labeled, catalog, descriptions, ranking, config, gateway, model, log)
    if config.grounded:
        check = validate_path(model, [s.interaction_id for s in steps])
        if not check.valid:
            raise StageError("s2r", GenerationError(check.reason, [s.interaction_id for s in steps]))
    title, ob, eb, info = stage("obeb", generate_ob_eb, labeled, steps, ranking, descriptions, config, gateway, log)
    generated = stage("assemble", assemble_report, title, ob, eb, steps, info)
    return generated, trace

