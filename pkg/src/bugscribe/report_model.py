"""Bug reports in and out: raw reports, sentence units, generated reports, ground truth."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .errors import SchemaError
from .execution_model import ExecutionModel, Interaction, validate_path
from .jsonio import validate

LABELS = ("OB", "EB", "S2R", "OTHER")
GT_SCHEMA_ID = "bugscribe-gt/1"

SECTION_OB = "## Observed Behavior"
SECTION_EB = "## Expected Behavior"
SECTION_S2R = "## Steps to Reproduce"
SECTION_INFO = "## Additional Information"


@dataclass(frozen=True)
class BugReport:
    report_id: str
    app_id: str
    body: str
    title: str = ""
    environment: str | None = None

    def __post_init__(self) -> None:
        if not self.body.strip():
            raise SchemaError("report body is empty", "/body")

    def to_json(self) -> dict[str, Any]:
        doc = {"report_id": self.report_id, "app_id": self.app_id, "title": self.title, "body": self.body}
        if self.environment is not None:
            doc["environment"] = self.environment
        return doc


REPORT_SCHEMA = {
    "type": "object",
    "required": ["report_id", "app_id", "body"],
    "properties": {
        "report_id": {"type": "string", "minLength": 1},
        "app_id": {"type": "string", "minLength": 1},
        "title": {"type": "string"},
        "body": {"type": "string", "minLength": 1},
        "environment": {"type": ["string", "null"]},
    },
}


def parse_report(document: Mapping[str, Any]) -> BugReport:
    validate(document, REPORT_SCHEMA)
    return BugReport(
        report_id=document["report_id"],
        app_id=document["app_id"],
        body=document["body"],
        title=document.get("title", "") or "",
        environment=document.get("environment") or None,
    )


# ------------------------------------------------------------ sentence units

_TERMINAL = re.compile(r"[.!?。！？]+[\"'”’)\]]*")
_ABBREVIATIONS = frozenset({"e.g.", "i.e.", "etc.", "vs.", "mr.", "dr.", "approx.", "no.", "fig.", "ex."})
_LINE = re.compile(r"[^\r\n]+")


def _line_breaks(line: str) -> list[int]:
    cuts = []
    for m in _TERMINAL.finditer(line):
        end = m.end()
        rest = line[end:]
        if not rest[:1].isspace() or not rest.strip():
            continue
        nxt = rest.lstrip()[0]
        if nxt.islower():
            continue
        token = line[: m.start()].rsplit(None, 1)[-1] if line[: m.start()].strip() else ""
        punct = m.group()
        if punct.startswith(".") and not punct.startswith(".."):
            if re.fullmatch(r"\d{1,2}|[A-Za-z]", token):
                continue  # list marker or initial
            if (token + ".").lower() in _ABBREVIATIONS or token.lower().endswith(("e.g", "i.e")):
                continue
        cuts.append(end)
    return cuts


def sentence_spans(body: str) -> list[tuple[int, int]]:
    """Character spans of sentence units; whitespace between them is the separator.

    Units end at line breaks and at terminal punctuation followed by a
    non-lowercase start. Every non-whitespace character lies in exactly one span.
    """
    spans = []
    for line_match in _LINE.finditer(body):
        line = line_match.group()
        base = line_match.start()
        bounds = [0, *_line_breaks(line), len(line)]
        for a, b in zip(bounds, bounds[1:]):
            piece = line[a:b]
            stripped = piece.strip()
            if not stripped:
                continue
            start = base + a + (len(piece) - len(piece.lstrip()))
            spans.append((start, start + len(stripped)))
    return spans


def split_sentences(body: str) -> list[str]:
    return [body[a:b] for a, b in sentence_spans(body)]


@dataclass(frozen=True)
class LabeledSentence:
    index: int
    text: str
    label: str

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown sentence label {self.label!r}")
        if not self.text:
            raise ValueError("sentence text is empty")


# ------------------------------------------------------------------ steps

ATOMIC_STEP_RE = re.compile(
    r"^(?:open the app|press the back button|rotate the device"
    r"|(?:tap|long-tap|swipe) (?:'[^']+'|the) [a-z][a-z-]*(?: [a-z][a-z-]*)?"
    r"|type '.*' in (?:'[^']+'|the) [a-z][a-z-]*(?: [a-z][a-z-]*)?)$"
)


def kind_phrase(kind: str) -> str:
    return kind.replace("-", " ")


def step_text(interaction: Interaction) -> str:
    """"[action] [GUI component]" description synthesized from edge metadata."""
    action = interaction.action
    if action == "open-app":
        return "open the app"
    if action == "back":
        return "press the back button"
    if action == "rotate":
        return "rotate the device"
    comp = interaction.component
    name = comp.name()
    target = f"'{name}' {kind_phrase(comp.kind)}" if name else f"the {kind_phrase(comp.kind)}"
    if action == "type":
        return f"type '{interaction.input_text}' in {target}"
    return f"{action} {target}"


@dataclass(frozen=True)
class AtomicStep:
    ordinal: int
    text: str
    interaction_id: str | None = None
    source_screen: str | None = None
    target_screen: str | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("step text is empty")

    @classmethod
    def grounded(cls, ordinal: int, interaction: Interaction) -> "AtomicStep":
        return cls(ordinal, step_text(interaction), interaction.id, interaction.source, interaction.target)

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"ordinal": self.ordinal, "text": self.text}
        for key in ("interaction_id", "source_screen", "target_screen"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "AtomicStep":
        return cls(
            doc["ordinal"],
            doc["text"],
            doc.get("interaction_id"),
            doc.get("source_screen"),
            doc.get("target_screen"),
        )


def is_atomic(text: str) -> bool:
    return ATOMIC_STEP_RE.match(text) is not None


def check_grounding(model: ExecutionModel, steps: Sequence[AtomicStep]) -> None:
    """Each grounded step's endpoints must agree with the referenced interaction."""
    for i, step in enumerate(steps):
        if step.interaction_id is None:
            continue
        edge = model.by_id.get(step.interaction_id)
        if edge is None:
            raise SchemaError(f"unknown interaction {step.interaction_id}", f"/steps/{i}/interaction_id")
        if (step.source_screen, step.target_screen) != (edge.source, edge.target):
            raise SchemaError("step endpoints disagree with its interaction", f"/steps/{i}")


# --------------------------------------------------------------- OB and EB


def _sentence(text: str) -> str:
    text = text.strip()
    if text and text[-1] not in ".!?":
        text += "."
    return text[:1].upper() + text[1:]


@dataclass(frozen=True)
class ObDescription:
    buggy_behavior: str
    buggy_screen_reference: str
    triggering_interaction: str
    rendered: str

    def __post_init__(self) -> None:
        for part in (self.buggy_behavior, self.buggy_screen_reference, self.triggering_interaction):
            if part not in self.rendered:
                raise ValueError(f"rendered OB does not contain {part!r}")

    @classmethod
    def from_elements(cls, buggy_behavior: str, buggy_screen_reference: str, triggering_interaction: str) -> "ObDescription":
        behavior = buggy_behavior.strip().rstrip(".")
        ref = buggy_screen_reference.strip()
        trigger = triggering_interaction.strip()
        if ref and trigger:
            text = f"On {ref}, if the user {trigger}, {behavior}"
        elif ref:
            text = f"On {ref}, {behavior}"
        elif trigger:
            text = f"If the user {trigger}, {behavior}"
        else:
            behavior = behavior[:1].upper() + behavior[1:]
            text = behavior
        return cls(behavior, ref, trigger, _sentence(text))

    def elements(self) -> dict[str, str]:
        return {
            "buggy_behavior": self.buggy_behavior,
            "buggy_screen_reference": self.buggy_screen_reference,
            "triggering_interaction": self.triggering_interaction,
        }

    def to_json(self) -> dict[str, str]:
        return {**self.elements(), "rendered": self.rendered}

    @classmethod
    def from_json(cls, doc: Mapping[str, str]) -> "ObDescription":
        return cls(doc["buggy_behavior"], doc["buggy_screen_reference"], doc["triggering_interaction"], doc["rendered"])


_OB_FULL = re.compile(r"^On (?P<ref>.+?), if the user (?P<trigger>.+?), (?P<behavior>.+?)\.?$", re.S)
_OB_REF = re.compile(r"^On (?P<ref>.+?), (?P<behavior>.+?)\.?$", re.S)
_OB_TRIGGER = re.compile(r"^If the user (?P<trigger>.+?), (?P<behavior>.+?)\.?$", re.S)


def parse_ob(rendered: str) -> ObDescription:
    """Recover the three OB elements from a sentence in the OB template."""
    text = rendered.strip()
    for pattern in (_OB_FULL, _OB_TRIGGER, _OB_REF):
        m = pattern.match(text)
        if m:
            g = m.groupdict()
            return ObDescription(g["behavior"], g.get("ref") or "", g.get("trigger") or "", text)
    return ObDescription(text.rstrip("."), "", "", text)


_MODAL = re.compile(r"\b(should not|shouldn't|should)\b", re.I)


@dataclass(frozen=True)
class EbDescription:
    intended_behavior: str
    rendered: str

    def __post_init__(self) -> None:
        if self.intended_behavior not in self.rendered:
            raise ValueError("rendered EB does not contain the intended behavior")

    @classmethod
    def from_parts(cls, subject: str, modal: str, intended: str) -> "EbDescription":
        """Render "[subject] should/shouldn't [intended behavior]"."""
        modal = modal.strip().lower()
        if modal not in ("should", "shouldn't", "should not"):
            raise ValueError(f"EB modal must be should/shouldn't, got {modal!r}")
        element = f"{modal} {intended.strip().rstrip('.')}"
        return cls(element, _sentence(f"{subject.strip() or 'the app'} {element}"))

    def to_json(self) -> dict[str, str]:
        return {"intended_behavior": self.intended_behavior, "rendered": self.rendered}

    @classmethod
    def from_json(cls, doc: Mapping[str, str]) -> "EbDescription":
        return cls(doc["intended_behavior"], doc["rendered"])


def parse_eb(rendered: str) -> EbDescription:
    text = rendered.strip()
    m = _MODAL.search(text)
    if not m:
        return EbDescription(text.rstrip("."), text)
    return EbDescription(text[m.start():].rstrip("."), text)


# -------------------------------------------------------- generated report


@dataclass(frozen=True)
class GeneratedReport:
    title: str
    ob: ObDescription
    eb: EbDescription
    steps: tuple[AtomicStep, ...]
    additional_info: str | None = None

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a generated report needs at least one step")
        if "\n" in self.title:
            raise ValueError("title must be a single line")


def render_markdown(report: GeneratedReport) -> str:
    parts = [f"# {report.title}", SECTION_OB, report.ob.rendered, SECTION_EB, report.eb.rendered, SECTION_S2R]
    parts.append("\n".join(f"{i}. {s.text}" for i, s in enumerate(report.steps, 1)))
    if report.additional_info:
        parts += [SECTION_INFO, report.additional_info.strip()]
    return "\n\n".join(parts) + "\n"


_STEP_LINE = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")


def parse_markdown(text: str) -> GeneratedReport:
    """Inverse of :func:`render_markdown`; steps come back ungrounded."""
    title = ""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.replace("\r\n", "\n").split("\n"):
        if line.startswith("## "):
            current = sections.setdefault(line.strip(), [])
        elif line.startswith("# ") and not title and current is None:
            title = line[2:].strip()
        elif current is not None:
            current.append(line)
    for required in (SECTION_OB, SECTION_EB, SECTION_S2R):
        if required not in sections:
            raise SchemaError(f"missing section {required!r}", "/" + required[3:].lower().replace(" ", "_"))
    steps = []
    for line in sections[SECTION_S2R]:
        m = _STEP_LINE.match(line)
        if m:
            steps.append(AtomicStep(len(steps) + 1, m.group(2)))
    if not steps:
        raise SchemaError("no enumerated steps", "/steps_to_reproduce")
    info = "\n".join(sections.get(SECTION_INFO, [])).strip() or None
    return GeneratedReport(
        title=title,
        ob=parse_ob("\n".join(sections[SECTION_OB]).strip()),
        eb=parse_eb("\n".join(sections[SECTION_EB]).strip()),
        steps=tuple(steps),
        additional_info=info,
    )


# ------------------------------------------------------------ ground truth


@dataclass(frozen=True)
class GroundTruth:
    report_id: str
    gt_steps: tuple[AtomicStep, ...]
    buggy_screen: str
    ob_elements: ObDescription
    eb_element: EbDescription
    app_id: str = ""

    def __post_init__(self) -> None:
        if not self.gt_steps or any(s.interaction_id is None for s in self.gt_steps):
            raise SchemaError("ground-truth steps must all be grounded", "/steps")
        if self.gt_steps[-1].target_screen != self.buggy_screen:
            raise SchemaError("last step must end on the buggy screen", "/buggy_screen")

    def check(self, model: ExecutionModel) -> None:
        check_grounding(model, self.gt_steps)
        result = validate_path(model, [s.interaction_id for s in self.gt_steps])
        if not result.valid:
            raise SchemaError(f"ground-truth path invalid: {result.reason}", f"/steps/{result.index}")


GT_SCHEMA = {
    "type": "object",
    "required": ["schema", "report_id", "buggy_screen", "steps", "ob", "eb"],
    "properties": {
        "schema": {"const": GT_SCHEMA_ID},
        "report_id": {"type": "string"},
        "app_id": {"type": "string"},
        "buggy_screen": {"type": "string"},
        "steps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["ordinal", "text", "interaction_id", "source_screen", "target_screen"],
                "properties": {
                    "ordinal": {"type": "integer", "minimum": 1},
                    "text": {"type": "string", "minLength": 1},
                    "interaction_id": {"type": "string"},
                    "source_screen": {"type": "string"},
                    "target_screen": {"type": "string"},
                },
            },
        },
        "ob": {
            "type": "object",
            "required": ["buggy_behavior", "buggy_screen_reference", "triggering_interaction", "rendered"],
            "properties": {k: {"type": "string"} for k in ("buggy_behavior", "buggy_screen_reference", "triggering_interaction", "rendered")},
        },
        "eb": {
            "type": "object",
            "required": ["intended_behavior", "rendered"],
            "properties": {k: {"type": "string"} for k in ("intended_behavior", "rendered")},
        },
    },
}


def ground_truth_to_json(gt: GroundTruth) -> dict[str, Any]:
    return {
        "schema": GT_SCHEMA_ID,
        "report_id": gt.report_id,
        "app_id": gt.app_id,
        "buggy_screen": gt.buggy_screen,
        "steps": [s.to_json() for s in gt.gt_steps],
        "ob": gt.ob_elements.to_json(),
        "eb": gt.eb_element.to_json(),
    }


def parse_ground_truth(document: Mapping[str, Any], model: ExecutionModel | None = None) -> GroundTruth:
    validate(document, GT_SCHEMA)
    try:
        gt = GroundTruth(
            report_id=document["report_id"],
            gt_steps=tuple(AtomicStep.from_json(s) for s in document["steps"]),
            buggy_screen=document["buggy_screen"],
            ob_elements=ObDescription.from_json(document["ob"]),
            eb_element=EbDescription.from_json(document["eb"]),
            app_id=document.get("app_id", ""),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), "/") from exc
    if model is not None:
        gt.check(model)
    return gt

