"""Sentence-level OB/EB/S2R labeling of bug reports."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import FormatError, SchemaError
from .gateway import CompletionRequest, Gateway
from .jsonio import validate
from .report_model import LABELS, BugReport, LabeledSentence, parse_report, split_sentences

LABELED_SCHEMA_ID = "bugscribe-labeled/1"
TEMPLATE_ID = "annotate"

# When the model emits several labels for one sentence, the first match wins.
LABEL_PRIORITY = ("OB", "EB", "S2R", "OTHER")


@dataclass(frozen=True)
class LabeledReport:
    report: BugReport
    sentences: tuple[LabeledSentence, ...]

    def __post_init__(self) -> None:
        texts = split_sentences(self.report.body)
        if [s.text for s in self.sentences] != texts:
            raise ValueError("labeled sentences do not match the report's sentence units")
        if [s.index for s in self.sentences] != list(range(len(texts))):
            raise ValueError("sentence indices must be contiguous from 0")

    def with_label(self, label: str) -> list[LabeledSentence]:
        return [s for s in self.sentences if s.label == label]

    def has(self, label: str) -> bool:
        return any(s.label == label for s in self.sentences)

    def formatted(self) -> str:
        """Full report text with per-sentence labels, as bound into downstream prompts."""
        lines = [f"Title: {self.report.title or '(none)'}"]
        lines += [f"[{s.index}] ({s.label}) {s.text}" for s in self.sentences]
        if self.report.environment:
            lines.append(f"Environment: {self.report.environment}")
        return "\n".join(lines)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": LABELED_SCHEMA_ID,
            "report": self.report.to_json(),
            "sentences": [{"index": s.index, "text": s.text, "label": s.label} for s in self.sentences],
        }


LABELED_SCHEMA = {
    "type": "object",
    "required": ["schema", "report", "sentences"],
    "properties": {
        "schema": {"const": LABELED_SCHEMA_ID},
        "report": {"type": "object"},
        "sentences": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "text", "label"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "text": {"type": "string", "minLength": 1},
                    "label": {"enum": list(LABELS)},
                },
            },
        },
    },
}


def parse_labeled(document: Mapping[str, Any]) -> LabeledReport:
    validate(document, LABELED_SCHEMA)
    report = parse_report(document["report"])
    try:
        return LabeledReport(
            report,
            tuple(LabeledSentence(s["index"], s["text"], s["label"]) for s in document["sentences"]),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), "/sentences") from exc


def _pick_label(value: Any) -> str:
    labels = value if isinstance(value, list) else [value]
    labels = {str(v).strip().upper() for v in labels}
    labels = {"S2R" if v in ("S2RS", "STEP") else v for v in labels}
    for label in LABEL_PRIORITY:
        if label in labels:
            return label
    raise ValueError(f"unknown label(s) {sorted(labels)}")


def labels_from_response(parsed: Any, n: int, raw_text: str = "") -> list[str]:
    """Turn the model's ``[{index, label}]`` answer into one label per sentence."""
    if isinstance(parsed, dict):
        for key in ("labels", "sentences", "results"):
            if isinstance(parsed.get(key), list):
                parsed = parsed[key]
                break
    if not isinstance(parsed, list):
        raise FormatError("expected a JSON array of {index, label} objects", raw_text)
    labels = ["OTHER"] * n
    seen: set[int] = set()
    for item in parsed:
        if not isinstance(item, dict) or "index" not in item:
            raise FormatError(f"malformed label entry {item!r}", raw_text)
        idx = item["index"]
        if not isinstance(idx, int) or not 0 <= idx < n:
            raise FormatError(f"sentence index {idx!r} out of range 0..{n - 1}", raw_text)
        if idx in seen:
            raise FormatError(f"duplicate sentence index {idx}", raw_text)
        seen.add(idx)
        try:
            labels[idx] = _pick_label(item.get("label", item.get("labels")))
        except ValueError as exc:
            raise FormatError(str(exc), raw_text) from None
    return labels


def annotation_request(report: BugReport) -> CompletionRequest:
    sentences = split_sentences(report.body)
    return CompletionRequest(
        TEMPLATE_ID,
        {
            "title": report.title or "(none)",
            "sentences": "\n".join(f"[{i}] {text}" for i, text in enumerate(sentences)),
        },
    )


def classify_sentences(report: BugReport, gateway: Gateway) -> LabeledReport:
    """Label every sentence unit of ``report`` with a single request."""
    sentences = split_sentences(report.body)
    result = gateway.complete(annotation_request(report))
    labels = labels_from_response(result.parsed, len(sentences), result.raw_text)
    return LabeledReport(
        report, tuple(LabeledSentence(i, text, label) for i, (text, label) in enumerate(zip(sentences, labels)))
    )


_EB_CUES = re.compile(r"\b(should|shouldn't|expected|expect|supposed to|would like|ought to|instead)\b", re.I)
_OB_CUES = re.compile(
    r"\b(crash\w*|error\w*|exception|fail\w*|incorrect\w*|wrong|broken|freez\w*|hang\w*|stops?|stopped"
    r"|doesn't|does not|isn't|is not|can't|cannot|not (?:shown|displayed|working|saved)|missing|bug)\b",
    re.I,
)
_S2R_CUES = re.compile(
    r"^(?:\d+[.)]\s*|[-*•]\s*)|^(?:open|tap|click|press|select|go to|navigate|enter|type|swipe|scroll|long[- ]press"
    r"|launch|start|choose|add|create|delete|edit|then)\b",
    re.I,
)
_TRACE_LINE = re.compile(r"^\s*(?:at [\w$.<>]+\(|Caused by:|[\w.]+(?:Exception|Error)\b)")


def heuristic_label(sentence: str) -> str:
    """Keyword rules; offline smoke tests only, never evaluation."""
    if _TRACE_LINE.match(sentence):
        return "OTHER"
    if _EB_CUES.search(sentence):
        return "EB"
    if _OB_CUES.search(sentence):
        return "OB"
    if _S2R_CUES.search(sentence.strip()):
        return "S2R"
    return "OTHER"


def classify_heuristic(report: BugReport) -> LabeledReport:
    sentences = split_sentences(report.body)
    return LabeledReport(
        report, tuple(LabeledSentence(i, text, heuristic_label(text)) for i, text in enumerate(sentences))
    )
