"""App context for generation: screen descriptions, interaction catalog, buggy-screen ranking."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping

from .annotation import LabeledReport
from .errors import FormatError, LocalizationError, SchemaError
from .execution_model import LAUNCHER, ExecutionModel, Interaction, Node, preorder
from .gateway import CompletionRequest, Gateway
from .jsonio import validate
from .report_model import kind_phrase

logger = logging.getLogger(__name__)

DESC_SCHEMA_ID = "bugscribe-desc/1"
RANKING_SCHEMA_ID = "bugscribe-ranking/1"
LAUNCHER_DESCRIPTION = "Device launcher; the app is not yet open."
MAX_RANKED = 10

RequestLog = list  # of (stage, fixture key)


@dataclass(frozen=True)
class ScreenDescription:
    screen_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"empty description for screen {self.screen_id}")


def _component_line(depth: int, node: Node) -> str:
    c = node.component
    parts = [c.kind]
    if c.resource_id:
        parts.append(f"id={c.resource_id}")
    if c.label:
        parts.append(f'text="{c.label}"')
    if c.content_description:
        parts.append(f'description="{c.content_description}"')
    return "  " * depth + "- " + " ".join(parts)


def describe_request(model: ExecutionModel, screen_id: str) -> CompletionRequest:
    screen = model.screen(screen_id)
    kind = "dialog" if screen.is_dialog else "full screen"
    components = [_component_line(d, screen.hierarchy[i]) for d, i in preorder(screen.hierarchy)]
    return CompletionRequest(
        "describe_screen",
        {
            "screen": f"id: {screen.id}\nactivity: {screen.activity_name}\nwindow: {kind}",
            "components": "\n".join(components) or "(no components)",
        },
        expected_format="text",
    )


def describe_screen(
    model: ExecutionModel, screen_id: str, gateway: Gateway, log: RequestLog | None = None
) -> ScreenDescription:
    if screen_id == LAUNCHER:
        model.screen(screen_id)
        return ScreenDescription(LAUNCHER, LAUNCHER_DESCRIPTION)
    result = gateway.complete(describe_request(model, screen_id))
    if log is not None:
        log.append((f"describe:{screen_id}", result.key))
    return ScreenDescription(screen_id, result.raw_text.strip())


def describe_all(
    model: ExecutionModel, gateway: Gateway, jobs: int = 4, log: RequestLog | None = None
) -> dict[str, ScreenDescription]:
    """Describe every screen; requests fan out, results come back sorted by screen id."""
    ids = sorted(model.screens)
    local_logs: dict[str, RequestLog] = {sid: [] for sid in ids}

    def one(sid: str) -> ScreenDescription:
        return describe_screen(model, sid, gateway, local_logs[sid])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(sid) for sid in ids]
    if log is not None:
        for sid in ids:
            log.extend(local_logs[sid])
    return {d.screen_id: d for d in results}


def descriptions_to_json(app_id: str, descriptions: Mapping[str, ScreenDescription]) -> dict[str, Any]:
    return {
        "schema": DESC_SCHEMA_ID,
        "app_id": app_id,
        "descriptions": {sid: descriptions[sid].text for sid in sorted(descriptions)},
    }


DESC_SCHEMA = {
    "type": "object",
    "required": ["schema", "descriptions"],
    "properties": {
        "schema": {"const": DESC_SCHEMA_ID},
        "app_id": {"type": "string"},
        "descriptions": {"type": "object", "additionalProperties": {"type": "string", "minLength": 1}},
    },
}


def parse_descriptions(document: Mapping[str, Any], model: ExecutionModel | None = None) -> dict[str, ScreenDescription]:
    validate(document, DESC_SCHEMA)
    out = {sid: ScreenDescription(sid, text) for sid, text in sorted(document["descriptions"].items())}
    if model is not None:
        missing = sorted(set(model.screens) - set(out) - {LAUNCHER})
        if missing:
            raise SchemaError(f"{len(missing)} model screens have no description", f"/descriptions/{missing[0]}")
        unknown = sorted(set(out) - set(model.screens))
        if unknown:
            raise SchemaError("description for a screen not in the model", f"/descriptions/{unknown[0]}")
        out.setdefault(LAUNCHER, ScreenDescription(LAUNCHER, LAUNCHER_DESCRIPTION))
    return out


# ------------------------------------------------------------------ catalog


def component_phrase(edge: Interaction) -> str:
    """"<label|content description|resource id> <kind>", first non-empty field wins."""
    if edge.component is None:
        return {"open-app": "app", "back": "back button", "rotate": "device"}.get(edge.action, "screen")
    name = edge.component.name()
    kind = kind_phrase(edge.component.kind)
    return f"{name} {kind}" if name else kind


@dataclass(frozen=True)
class CatalogEntry:
    interaction_id: str
    action: str
    component: str
    source: str
    target: str
    input_text: str | None = None

    def line(self) -> str:
        action = f"{self.action} '{self.input_text}'" if self.input_text is not None else self.action
        return f"{self.interaction_id} | {action} | {self.component} | {self.source} | {self.target}"


@dataclass(frozen=True)
class InteractionCatalog:
    entries: tuple[CatalogEntry, ...]

    @property
    def ids(self) -> frozenset[str]:
        return frozenset(e.interaction_id for e in self.entries)

    def formatted(self) -> str:
        return "\n".join(e.line() for e in self.entries)

    def to_json(self) -> list[dict[str, Any]]:
        return [e.__dict__.copy() for e in self.entries]


def build_catalog(model: ExecutionModel) -> InteractionCatalog:
    entries = [
        CatalogEntry(e.id, e.action, component_phrase(e), e.source, e.target, e.input_text)
        for e in model.interactions
    ]
    entries.sort(key=lambda c: (c.source, c.interaction_id))
    return InteractionCatalog(tuple(entries))


# ---------------------------------------------------------------- ranking


@dataclass(frozen=True)
class ScreenRanking:
    ranked: tuple[tuple[str, str], ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.ranked:
            raise LocalizationError("empty screen ranking")
        ids = [sid for sid, _ in self.ranked]
        if len(set(ids)) != len(ids):
            raise LocalizationError("duplicate screen ids in ranking")

    @property
    def top(self) -> str:
        return self.ranked[0][0]

    def to_json(self, report_id: str = "") -> dict[str, Any]:
        return {
            "schema": RANKING_SCHEMA_ID,
            "report_id": report_id,
            "top": self.top,
            "ranked": [{"screen_id": s, "rationale": r} for s, r in self.ranked],
        }


RANKING_SCHEMA = {
    "type": "object",
    "required": ["schema", "ranked"],
    "properties": {
        "schema": {"const": RANKING_SCHEMA_ID},
        "ranked": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["screen_id"],
                "properties": {"screen_id": {"type": "string"}, "rationale": {"type": "string"}},
            },
        },
    },
}


def parse_ranking(document: Mapping[str, Any]) -> ScreenRanking:
    validate(document, RANKING_SCHEMA)
    return ScreenRanking(tuple((r["screen_id"], r.get("rationale", "")) for r in document["ranked"]))


def format_descriptions(descriptions: Mapping[str, ScreenDescription], ids=None) -> str:
    ids = sorted(descriptions) if ids is None else ids
    return "\n".join(f"{sid}: {descriptions[sid].text}" for sid in ids if sid != LAUNCHER)


def localization_request(
    labeled: LabeledReport, descriptions: Mapping[str, ScreenDescription], catalog: InteractionCatalog
) -> CompletionRequest:
    return CompletionRequest(
        "localize",
        {
            "bug_report": labeled.formatted(),
            "screens": format_descriptions(descriptions),
            "interactions": catalog.formatted(),
        },
    )


def _resolve(name: str, descriptions: Mapping[str, ScreenDescription]) -> str | None:
    if name in descriptions:
        return name
    hits = [sid for sid, d in descriptions.items() if name and d.text.startswith(name)]
    return hits[0] if len(hits) == 1 else None


def localize_buggy_screen(
    labeled: LabeledReport,
    descriptions: Mapping[str, ScreenDescription],
    catalog: InteractionCatalog,
    gateway: Gateway,
    log: RequestLog | None = None,
) -> ScreenRanking:
    """Rank candidate buggy screens; the first entry is used downstream."""
    candidates = sorted(sid for sid in descriptions if sid != LAUNCHER)
    if not candidates:
        raise LocalizationError("model has no screens to rank")
    if len(candidates) == 1:
        return ScreenRanking(((candidates[0], "only screen in the model"),))
    result = gateway.complete(localization_request(labeled, descriptions, catalog))
    if log is not None:
        log.append(("localize", result.key))
    parsed = result.parsed
    if isinstance(parsed, dict):
        parsed = parsed.get("ranking", parsed.get("screens"))
    if not isinstance(parsed, list):
        raise FormatError("expected {\"ranking\": [...]}", result.raw_text)
    ranked: list[tuple[str, str]] = []
    warnings: list[str] = []
    for item in parsed[:MAX_RANKED]:
        if isinstance(item, str):
            name, why = item, ""
        elif isinstance(item, dict):
            name, why = str(item.get("screen_id", item.get("id", ""))), str(item.get("rationale", ""))
        else:
            raise FormatError(f"malformed ranking entry {item!r}", result.raw_text)
        sid = _resolve(name, descriptions)
        if sid is None or sid == LAUNCHER:
            msg = f"dropped ranked screen {name!r}: not a model screen"
            logger.warning(msg)
            warnings.append(msg)
            continue
        if sid in (s for s, _ in ranked):
            continue
        ranked.append((sid, why))
    if not ranked:
        raise LocalizationError("no ranked screen refers to the model")
    return ScreenRanking(tuple(ranked), tuple(warnings))
