"""Report quality model: step matching, P/R/F1, OB/EB element labels and annotator agreement."""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .errors import AgreementError, AssessmentError, FormatError, SchemaError
from .execution_model import LAUNCHER, ExecutionModel
from .gateway import CompletionRequest, Gateway
from .jsonio import validate
from .report_model import AtomicStep, GeneratedReport, GroundTruth, step_text

logger = logging.getLogger(__name__)

ASSESS_SCHEMA_ID = "bugscribe-assess/1"
SCORE_SCHEMA_ID = "bugscribe-score/1"

ELEMENTS = ("buggy_behavior", "triggering_interaction", "buggy_screen_reference", "intended_behavior")
QUALITY_LABELS = ("Correct", "Incomplete", "Ambiguous", "Missing", "Incorrect")
ELEMENT_TITLES = {
    "buggy_behavior": "Buggy Behavior (OB)",
    "triggering_interaction": "Triggering GUI Interaction (OB)",
    "buggy_screen_reference": "Buggy Screen Reference (OB)",
    "intended_behavior": "Intended Behavior (EB)",
}

# ----------------------------------------------------------- step matching

# Leading action phrases rewritten to the canonical step vocabulary.
ACTION_SYNONYMS: tuple[tuple[str, str], ...] = (
    (r"(?:launch|start|open|run) (?:the )?app(?:lication)?", "open the app"),
    (r"(?:go|navigate) back|(?:press|tap|hit|click) (?:the )?back(?: button)?", "press the back button"),
    (r"rotate(?: the)? (?:device|phone|screen)", "rotate the device"),
    (r"long[- ]?(?:press|click|tap)(?: on)?", "long-tap"),
    (r"(?:click|press|select|touch|choose|hit|tap)(?: on)?", "tap"),
    (r"(?:enter|input|write|fill in|type)", "type"),
    (r"(?:scroll|swipe|fling)", "swipe"),
)
_SYNONYM_RES = tuple((re.compile(rf"^(?:{pat})\b"), repl) for pat, repl in ACTION_SYNONYMS)
_QUOTES = str.maketrans({"‘": "'", "’": "'", "“": "'", "”": "'", '"': "'"})


def normalize_step(text: str) -> str:
    """Lowercase, trim, straighten quotes and map the leading action to its canonical verb."""
    t = text.translate(_QUOTES).strip().lower()
    t = re.sub(r"^\d+[.)]\s*", "", t)
    t = re.sub(r"\s+", " ", t).rstrip(" .;!")
    for pattern, repl in _SYNONYM_RES:
        m = pattern.match(t)
        if m:
            t = repl + t[m.end():]
            break
    # "tap the 'Save' button" and "tap 'Save' button" describe the same step
    return re.sub(r"^(tap|long-tap|swipe|type '[^']*' in) the '", r"\1 '", t)


_SPLIT = re.compile(r"\s*(?:;|,?\s+and then\s+|,?\s+then\s+|,\s*and\s+|\s+and\s+)\s*", re.I)
_QUOTED = re.compile(r"'[^']*'|\"[^\"]*\"")


def _split_compound(text: str) -> list[str]:
    masked = _QUOTED.sub(lambda m: "\0" * len(m.group()), text)
    parts, start = [], 0
    for m in _SPLIT.finditer(masked):
        parts.append(text[start : m.start()])
        start = m.end()
    parts.append(text[start:])
    parts = [re.sub(r"^(?:and\s+)?then\s+|^and\s+", "", p.strip(), flags=re.I) for p in parts]
    return [p for p in parts if p]


def decompose_steps(steps: Sequence[AtomicStep]) -> list[AtomicStep]:
    """Split ungrounded compound steps on ";", "and" and "then" (outside quotes), renumbering."""
    out: list[AtomicStep] = []
    for step in steps:
        pieces = [step.text] if step.interaction_id else _split_compound(step.text) or [step.text]
        for piece in pieces:
            out.append(AtomicStep(len(out) + 1, piece, step.interaction_id, step.source_screen, step.target_screen))
    return out


@dataclass(frozen=True)
class StepMatch:
    pairs: tuple[tuple[int, int], ...]
    generated_labels: tuple[str, ...]
    missing: tuple[int, ...]
    mode: str = "id"

    @property
    def cs(self) -> int:
        return len(self.pairs)

    @property
    def es(self) -> int:
        return sum(1 for label in self.generated_labels if label == "ExtraStep")

    @property
    def ms(self) -> int:
        return len(self.missing)

    def metrics(self) -> "Metrics":
        return compute_metrics(self.cs, self.es, self.ms)

    def to_json(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "pairs": [list(p) for p in self.pairs],
            "generated_labels": list(self.generated_labels),
            "missing": list(self.missing),
            "cs": self.cs,
            "es": self.es,
            "ms": self.ms,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "StepMatch":
        return cls(
            tuple((int(g), int(t)) for g, t in doc["pairs"]),
            tuple(doc["generated_labels"]),
            tuple(doc["missing"]),
            doc.get("mode", "id"),
        )


def _step_key(step: AtomicStep, mode: str) -> Hashable:
    return step.interaction_id if mode == "id" else normalize_step(step.text)


def match_steps(generated: Sequence[AtomicStep], gt: Sequence[AtomicStep], *, decompose: bool = True) -> StepMatch:
    """Label generated steps CorrectStep/ExtraStep and list missing ground-truth ordinals.

    Steps are compared by interaction id when every step on both sides is
    grounded, else by normalized text. Each generated step, in order, takes
    the earliest still-unmatched ground-truth step with the same key.
    """
    if decompose:
        generated, gt = decompose_steps(generated), decompose_steps(gt)
    grounded = all(s.interaction_id for s in generated) and all(s.interaction_id for s in gt)
    mode = "id" if grounded else "text"
    free: dict[Hashable, list[int]] = {}
    for j, step in enumerate(gt):
        free.setdefault(_step_key(step, mode), []).append(j)
    pairs, labels = [], []
    for i, step in enumerate(generated):
        bucket = free.get(_step_key(step, mode))
        if bucket:
            j = bucket.pop(0)
            pairs.append((i + 1, j + 1))
            labels.append("CorrectStep")
        else:
            labels.append("ExtraStep")
    used = {t for _, t in pairs}
    missing = tuple(j for j in range(1, len(gt) + 1) if j not in used)
    return StepMatch(tuple(pairs), tuple(labels), missing, mode)


def reground_steps(model: ExecutionModel, steps: Sequence[AtomicStep]) -> list[AtomicStep] | None:
    """Recover interaction ids for parsed steps by walking the model from the launcher.

    Returns None when no walk reproduces the step texts, in which case
    matching falls back to text mode.
    """
    texts = [normalize_step(s.text) for s in steps]
    start = LAUNCHER
    if texts and texts[0] != "open the app" and model.initial_screen:
        start = model.initial_screen
    chosen: list = []

    def walk(screen: str, i: int) -> bool:
        if i == len(texts):
            return True
        for edge in sorted(model.outgoing.get(screen, ()), key=lambda e: e.id):
            if normalize_step(step_text(edge)) == texts[i]:
                chosen.append(edge)
                if walk(edge.target, i + 1):
                    return True
                chosen.pop()
        return False

    if not texts or not walk(start, 0):
        return None
    return [AtomicStep.grounded(i, e) for i, e in enumerate(chosen, 1)]


# ----------------------------------------------------------------- metrics


def round_half_up(value: Fraction, places: int = 2) -> Fraction:
    scale = 10**places
    return Fraction(math.floor(value * scale + Fraction(1, 2)), scale)


def format_pct(value: Fraction | None, places: int = 2) -> str:
    if value is None:
        return ""
    return f"{float(round_half_up(value, places)):.{places}f}"


@dataclass(frozen=True)
class Metrics:
    """Counts plus exact percentages; ``None`` marks an undefined ratio."""

    tp: int
    fp: int
    fn: int
    precision_exact: Fraction | None = field(repr=False, default=None)
    recall_exact: Fraction | None = field(repr=False, default=None)
    f1_exact: Fraction | None = field(repr=False, default=None)

    @property
    def precision(self) -> float | None:
        return None if self.precision_exact is None else float(round_half_up(self.precision_exact))

    @property
    def recall(self) -> float | None:
        return None if self.recall_exact is None else float(round_half_up(self.recall_exact))

    @property
    def f1(self) -> float | None:
        return None if self.f1_exact is None else float(round_half_up(self.f1_exact))

    def render(self) -> dict[str, str]:
        return {
            "precision": format_pct(self.precision_exact),
            "recall": format_pct(self.recall_exact),
            "f1": format_pct(self.f1_exact),
        }

    def to_json(self) -> dict[str, Any]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def compute_metrics(tp: int, fp: int, fn: int) -> Metrics:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    p = Fraction(100 * tp, tp + fp) if tp + fp else None
    r = Fraction(100 * tp, tp + fn) if tp + fn else None
    if p is None or r is None:
        f1 = None
    else:
        f1 = 2 * p * r / (p + r) if p + r else Fraction(0)
    return Metrics(tp, fp, fn, p, r, f1)


STEP_TABLE_HEADER = ("Approach", "CS", "ES", "MS", "Precision", "Recall", "F1")


def step_table_csv(rows: Mapping[str, tuple[int, int, int]]) -> str:
    """CS/ES/MS and P/R/F1 per approach, one row each."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STEP_TABLE_HEADER)
    for name, (cs, es, ms) in rows.items():
        rendered = compute_metrics(cs, es, ms).render()
        writer.writerow([name, cs, es, ms, rendered["precision"], rendered["recall"], rendered["f1"]])
    return buf.getvalue()


# ------------------------------------------------------- element assessment


@dataclass(frozen=True)
class ElementAssessment:
    element: str
    label: str
    source: str = "manual"

    def __post_init__(self) -> None:
        if self.element not in ELEMENTS:
            raise ValueError(f"unknown OB/EB element {self.element!r}")
        if self.label not in QUALITY_LABELS:
            raise ValueError(f"unknown quality label {self.label!r}")

    def to_json(self) -> dict[str, str]:
        return {"element": self.element, "label": self.label, "source": self.source}


ASSESS_SCHEMA = {
    "type": "object",
    "required": ["schema", "report_id", "labels"],
    "properties": {
        "schema": {"const": ASSESS_SCHEMA_ID},
        "report_id": {"type": "string"},
        "labels": {
            "type": "object",
            "required": list(ELEMENTS),
            "additionalProperties": False,
            "properties": {e: {"enum": list(QUALITY_LABELS)} for e in ELEMENTS},
        },
    },
}


def parse_assessment(document: Mapping[str, Any]) -> tuple[str, list[ElementAssessment]]:
    try:
        validate(document, ASSESS_SCHEMA)
    except SchemaError as exc:
        raise AssessmentError(f"malformed assessment file: {exc}") from exc
    labels = document["labels"]
    return document["report_id"], [ElementAssessment(e, labels[e], "manual") for e in ELEMENTS]


def assessment_to_json(report_id: str, assessments: Sequence[ElementAssessment]) -> dict[str, Any]:
    return {"schema": ASSESS_SCHEMA_ID, "report_id": report_id, "labels": {a.element: a.label for a in assessments}}


def element_texts(ob, eb) -> dict[str, str]:
    return {**ob.elements(), "intended_behavior": eb.intended_behavior}


def _norm_element(text: str) -> str:
    return re.sub(r"\s+", " ", text.translate(_QUOTES).lower()).strip(" .'")


def judge_request(generated: Mapping[str, str], truth: Mapping[str, str], elements: Sequence[str]) -> CompletionRequest:
    return CompletionRequest(
        "judge_elements",
        {
            "generated": "\n".join(f"{e}: {generated[e] or '(none)'}" for e in ELEMENTS),
            "ground_truth": "\n".join(f"{e}: {truth[e] or '(none)'}" for e in ELEMENTS),
            "elements": ", ".join(elements),
        },
    )


def assess_elements(
    generated: GeneratedReport,
    gt: GroundTruth,
    judge: str = "manual-file",
    *,
    assessment: Mapping[str, Any] | None = None,
    gateway: Gateway | None = None,
) -> list[ElementAssessment]:
    """Four labels per report, in :data:`ELEMENTS` order."""
    if judge == "manual-file":
        if assessment is None:
            raise AssessmentError("manual-file judging needs an assessment file")
        report_id, labels = parse_assessment(assessment)
        if report_id != gt.report_id:
            raise AssessmentError(f"assessment is for {report_id!r}, ground truth for {gt.report_id!r}")
        return labels
    if judge != "llm":
        raise ValueError(f"unknown judge {judge!r}")
    gen = element_texts(generated.ob, generated.eb)
    truth = element_texts(gt.ob_elements, gt.eb_element)
    decided: dict[str, ElementAssessment] = {}
    for e in ELEMENTS:
        if not gen[e].strip():
            decided[e] = ElementAssessment(e, "Missing", "empty")
        elif _norm_element(gen[e]) == _norm_element(truth[e]):
            decided[e] = ElementAssessment(e, "Correct", "exact")
    pending = [e for e in ELEMENTS if e not in decided]
    if pending:
        if gateway is None:
            raise AssessmentError("llm judging needs a gateway")
        result = gateway.complete(judge_request(gen, truth, pending))
        verdict = result.parsed
        if not isinstance(verdict, dict):
            raise FormatError("judge answer must be a JSON object", result.raw_text)
        for e in pending:
            label = str(verdict.get(e, "")).strip().capitalize()
            if label not in QUALITY_LABELS:
                raise FormatError(f"judge gave no valid label for {e}", result.raw_text)
            decided[e] = ElementAssessment(e, label, "llm")
    return [decided[e] for e in ELEMENTS]


@dataclass(frozen=True)
class ElementTable:
    """Per-element label counts over a dataset; rows follow :data:`ELEMENTS`."""

    rows: Mapping[str, Mapping[str, int]]
    reports: int

    def to_json(self) -> dict[str, Any]:
        return {"reports": self.reports, "rows": {e: dict(self.rows[e]) for e in self.rows}}

    def to_csv(self, approach: str = "") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("Element", "Approach", *QUALITY_LABELS))
        for e, counts in self.rows.items():
            writer.writerow((ELEMENT_TITLES[e], approach, *(counts[label] for label in QUALITY_LABELS)))
        return buf.getvalue()


def aggregate(assessments: Iterable[Sequence[ElementAssessment]]) -> ElementTable:
    per_report = list(assessments)
    if not per_report:
        return ElementTable({}, 0)
    rows = {e: Counter({label: 0 for label in QUALITY_LABELS}) for e in ELEMENTS}
    for report in per_report:
        seen = [a.element for a in report]
        if sorted(seen) != sorted(ELEMENTS):
            raise AssessmentError(f"expected one label per element, got {seen}")
        for a in report:
            rows[a.element][a.label] += 1
    return ElementTable({e: {label: rows[e][label] for label in QUALITY_LABELS} for e in ELEMENTS}, len(per_report))


# -------------------------------------------------------------- scorecards


@dataclass(frozen=True)
class Scorecard:
    report_id: str
    match: StepMatch
    elements: tuple[ElementAssessment, ...]

    @property
    def metrics(self) -> Metrics:
        return self.match.metrics()

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": SCORE_SCHEMA_ID,
            "report_id": self.report_id,
            "steps": self.match.to_json(),
            "metrics": self.metrics.to_json(),
            "elements": [a.to_json() for a in self.elements],
        }


SCORE_SCHEMA = {
    "type": "object",
    "required": ["schema", "report_id", "steps", "metrics", "elements"],
    "properties": {
        "schema": {"const": SCORE_SCHEMA_ID},
        "report_id": {"type": "string"},
        "steps": {
            "type": "object",
            "required": ["mode", "pairs", "generated_labels", "missing"],
            "properties": {
                "mode": {"enum": ["id", "text"]},
                "pairs": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}},
                "generated_labels": {"type": "array", "items": {"enum": ["CorrectStep", "ExtraStep"]}},
                "missing": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
        "elements": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["element", "label"],
                "properties": {"element": {"enum": list(ELEMENTS)}, "label": {"enum": list(QUALITY_LABELS)}},
            },
        },
    },
}


def parse_scorecard(document: Mapping[str, Any]) -> Scorecard:
    validate(document, SCORE_SCHEMA)
    match = StepMatch.from_json(document["steps"])
    if match.cs != sum(1 for label in match.generated_labels if label == "CorrectStep"):
        raise SchemaError("pair count disagrees with CorrectStep labels", "/steps/pairs")
    card = Scorecard(
        document["report_id"],
        match,
        tuple(ElementAssessment(a["element"], a["label"], a.get("source", "manual")) for a in document["elements"]),
    )
    if document["metrics"] != card.metrics.to_json():
        raise SchemaError("metrics do not follow from the step labels", "/metrics")
    return card


def evaluate_report(
    generated: GeneratedReport,
    gt: GroundTruth,
    model: ExecutionModel | None = None,
    judge: str = "manual-file",
    *,
    assessment: Mapping[str, Any] | None = None,
    gateway: Gateway | None = None,
) -> Scorecard:
    steps = list(generated.steps)
    if model is not None and not all(s.interaction_id for s in steps):
        steps = reground_steps(model, steps) or steps
    match = match_steps(steps, gt.gt_steps)
    labels = assess_elements(generated, gt, judge, assessment=assessment, gateway=gateway)
    return Scorecard(gt.report_id, match, tuple(labels))


def totals(cards: Iterable[Scorecard]) -> tuple[int, int, int]:
    cs = es = ms = 0
    for c in cards:
        cs, es, ms = cs + c.match.cs, es + c.match.es, ms + c.match.ms
    return cs, es, ms


# --------------------------------------------------------------- agreement


def observed_agreement(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    _check_pair(a, b)
    return sum(x == y for x, y in zip(a, b)) / len(a)


def _check_pair(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise AgreementError(f"label sequences differ in length ({len(a)} vs {len(b)})")
    if not a:
        raise AgreementError("need at least one labeled item")


def _kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> tuple[float, bool]:
    _check_pair(a, b)
    n = len(a)
    p_o = Fraction(sum(x == y for x, y in zip(a, b)), n)
    ca, cb = Counter(a), Counter(b)
    p_e = sum(Fraction(ca[k] * cb[k], n * n) for k in ca.keys() & cb.keys())
    if p_e == 1:
        return 1.0, True
    return float((p_o - p_e) / (1 - p_e)), False


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Two-rater kappa; constant identical labelings give 1 by convention."""
    return _kappa(a, b)[0]


def _alpha(units: Sequence[Sequence[Hashable | None]]) -> tuple[float, bool]:
    coincidence: Counter = Counter()
    for unit in units:
        values = [v for v in unit if v is not None]
        m = len(values)
        if m < 2:
            continue
        for i, c in enumerate(values):
            for j, k in enumerate(values):
                if i != j:
                    coincidence[c, k] += Fraction(1, m - 1)
    n = sum(coincidence.values())
    if n == 0:
        raise AgreementError("no item has at least two annotations")
    n_c: Counter = Counter()
    for (c, _), v in coincidence.items():
        n_c[c] += v
    d_o = sum(v for (c, k), v in coincidence.items() if c != k) / n
    d_e = sum(n_c[c] * n_c[k] for c in n_c for k in n_c if c != k) / (n * (n - 1))
    if d_e == 0:
        return 1.0, True
    return float(1 - d_o / d_e), False


def krippendorff_alpha(units: Sequence[Sequence[Hashable | None]]) -> float:
    """Nominal alpha over an items x annotators matrix; ``None`` marks a missing label."""
    return _alpha(units)[0]


@dataclass(frozen=True)
class AgreementReport:
    observed_agreement: float
    cohen_kappa: float
    krippendorff_alpha: float
    degenerate: bool = False
    items: int = 0

    def to_json(self) -> dict[str, Any]:
        return dict(self.__dict__)


def agreement(a: Sequence[Hashable | None], b: Sequence[Hashable | None]) -> AgreementReport:
    """All three statistics for two annotators; kappa and p_o use items both labeled."""
    if len(a) != len(b):
        raise AgreementError(f"label sequences differ in length ({len(a)} vs {len(b)})")
    both = [(x, y) for x, y in zip(a, b) if x is not None and y is not None]
    if not both:
        raise AgreementError("no item was labeled by both annotators")
    xs, ys = [x for x, _ in both], [y for _, y in both]
    kappa, k_degenerate = _kappa(xs, ys)
    alpha, a_degenerate = _alpha(list(zip(a, b)))
    return AgreementReport(observed_agreement(xs, ys), kappa, alpha, k_degenerate or a_degenerate, len(both))


def load_labels(document: Any) -> dict[str, Any] | list:
    """Accept a plain list, ``{"labels": [...]}`` or an item-id -> label mapping."""
    if isinstance(document, Mapping) and "labels" in document:
        document = document["labels"]
    if isinstance(document, (list, Mapping)):
        return document
    raise AgreementError("labels must be a list or an object mapping item ids to labels")


def align_labels(a, b) -> tuple[list, list]:
    if isinstance(a, Mapping) and isinstance(b, Mapping):
        keys = sorted(set(a) | set(b))
        return [a.get(k) for k in keys], [b.get(k) for k in keys]
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        raise AgreementError("both label files must use the same shape")
    return list(a), list(b)
