"""Graph model of an app: screens are nodes, GUI interactions are edges.

Models are built from exploration traces (automated or manual) and are
immutable once constructed; :func:`ingest_trace` and :func:`merge_models`
return new models.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Sequence

from .errors import (
    AppMismatchError,
    MergeConflictError,
    SchemaError,
    StructuralError,
    TraceError,
    UnknownScreenError,
)
from .jsonio import canonical_json, pretty_json, sha256_hex, validate

MODEL_SCHEMA_ID = "bugscribe-model/1"
LAUNCHER = "launcher"

ACTIONS = ("open-app", "tap", "long-tap", "type", "swipe", "back", "rotate")
COMPONENT_ACTIONS = frozenset({"tap", "long-tap", "type", "swipe"})
TEXT_INPUT_KINDS = frozenset({"text-field"})

# Android widget classes seen in uiautomator dumps -> kind tokens.
KIND_ALIASES = {
    "android.widget.button": "button",
    "android.widget.imagebutton": "button",
    "android.widget.edittext": "text-field",
    "android.widget.textview": "text",
    "android.widget.imageview": "image",
    "android.widget.checkbox": "checkbox",
    "android.widget.switch": "switch",
    "android.widget.listview": "list",
    "android.widget.linearlayout": "layout",
    "android.widget.framelayout": "layout",
    "android.widget.relativelayout": "layout",
    "android.widget.spinner": "dropdown",
    "androidx.recyclerview.widget.recyclerview": "list",
    "edittext": "text-field",
    "textfield": "text-field",
    "text field": "text-field",
    "menuitem": "menu-item",
    "menu item": "menu-item",
}

_WS = re.compile(r"\s+")


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower()
    return KIND_ALIASES.get(k, k.replace("_", "-"))


def normalize_label(text: str) -> str:
    return _WS.sub(" ", text).strip().lower()


@dataclass(frozen=True)
class UiComponent:
    kind: str
    resource_id: str = ""
    label: str = ""
    content_description: str = ""
    bounds: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self) -> None:
        left, top, right, bottom = self.bounds
        if left > right or top > bottom:
            raise StructuralError(f"inverted bounds {self.bounds} on {self.kind!r}")

    def identity(self) -> tuple[str, str, str, str]:
        """Device-independent identity: no bounds, no transient typed text."""
        label = "" if self.kind in TEXT_INPUT_KINDS else normalize_label(self.label)
        return (self.kind, self.resource_id, label, normalize_label(self.content_description))

    def name(self) -> str:
        """First non-empty of label, content description, resource id."""
        for value in (self.label, self.content_description, self.resource_id):
            if value.strip():
                return _WS.sub(" ", value).strip()
        return ""

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "resource_id": self.resource_id,
            "label": self.label,
            "content_description": self.content_description,
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "UiComponent":
        return cls(
            kind=normalize_kind(data["kind"]),
            resource_id=data.get("resource_id", "") or "",
            label=data.get("label", "") or "",
            content_description=data.get("content_description", "") or "",
            bounds=tuple(data.get("bounds", (0, 0, 0, 0))),
        )


class Node(NamedTuple):
    component: UiComponent
    parent: int | None


Hierarchy = tuple[Node, ...]


def _children(hierarchy: Sequence[Node]) -> tuple[list[int], dict[int, list[int]]]:
    n = len(hierarchy)
    roots: list[int] = []
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, node in enumerate(hierarchy):
        if node.parent is None:
            roots.append(i)
        elif not (0 <= node.parent < n) or node.parent == i:
            raise StructuralError(f"node {i} has orphan parent reference {node.parent}")
        else:
            children[node.parent].append(i)
    return roots, children


def preorder(hierarchy: Sequence[Node]) -> list[tuple[int, int]]:
    """(depth, node index) in depth-first order; rejects cycles and orphans."""
    roots, children = _children(hierarchy)
    order: list[tuple[int, int]] = []
    stack = [(0, r) for r in reversed(roots)]
    seen: set[int] = set()
    while stack:
        depth, i = stack.pop()
        if i in seen:
            raise StructuralError(f"node {i} reached twice")
        seen.add(i)
        order.append((depth, i))
        stack.extend((depth + 1, c) for c in reversed(children[i]))
    if len(seen) != len(hierarchy):
        missing = sorted(set(range(len(hierarchy))) - seen)
        raise StructuralError(f"nodes {missing} are unreachable from any root (cycle)")
    return order


def screen_identity(hierarchy: Sequence[Node], activity_name: str, is_dialog: bool) -> str:
    """SHA-256 digest of the canonical screen form.

    Bounds and typed text-field contents are left out so the same screen
    captured on different devices or with different input maps to one node.
    """
    canon = [
        [depth, *hierarchy[i].component.identity()] for depth, i in preorder(hierarchy)
    ]
    return sha256_hex(canonical_json([activity_name, bool(is_dialog), canon]))


@dataclass(frozen=True)
class Screen:
    id: str
    hierarchy: Hierarchy
    activity_name: str
    is_dialog: bool = False
    description: str | None = None

    @classmethod
    def build(
        cls,
        hierarchy: Iterable[Node],
        activity_name: str,
        is_dialog: bool = False,
        description: str | None = None,
    ) -> "Screen":
        hierarchy = tuple(Node(*n) for n in hierarchy)
        sid = screen_identity(hierarchy, activity_name, is_dialog)
        return cls(sid, hierarchy, activity_name, is_dialog, description)

    @property
    def components(self) -> list[UiComponent]:
        return [n.component for n in self.hierarchy]

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "activity": self.activity_name,
            "is_dialog": self.is_dialog,
            "hierarchy": [{**n.component.to_json(), "parent": n.parent} for n in self.hierarchy],
        }
        if self.description is not None:
            doc["description"] = self.description
        return doc


LAUNCHER_SCREEN = Screen(LAUNCHER, (), "launcher", False)


@dataclass(frozen=True)
class Interaction:
    id: str
    source: str
    target: str
    action: str
    component: UiComponent | None = None
    input_text: str | None = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise StructuralError(f"unknown action {self.action!r}")
        if (self.action == "type") != (self.input_text is not None):
            raise StructuralError("input_text must be present exactly when action is 'type'")
        if self.action in COMPONENT_ACTIONS and self.component is None:
            raise StructuralError(f"action {self.action!r} requires a component")

    @classmethod
    def build(
        cls,
        source: str,
        target: str,
        action: str,
        component: UiComponent | None = None,
        input_text: str | None = None,
    ) -> "Interaction":
        key = interaction_key(source, action, component, input_text, target)
        return cls("e" + sha256_hex(canonical_json(key))[:12], source, target, action, component, input_text)

    def key(self) -> tuple:
        return interaction_key(self.source, self.action, self.component, self.input_text, self.target)

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "source": self.source,
            "target": self.target,
            "action": self.action,
        }
        if self.component is not None:
            doc["component"] = self.component.to_json()
        if self.input_text is not None:
            doc["input_text"] = self.input_text
        return doc


def interaction_key(source, action, component, input_text, target) -> tuple:
    ident = list(component.identity()) if component is not None else None
    return (source, action, ident, input_text, target)


def _prefer(a, b):
    """Deterministic representative among two values sharing an id."""
    if a == b:
        return a
    return min(a, b, key=lambda v: canonical_json(v.to_json()))


@dataclass(frozen=True)
class ExecutionModel:
    app_id: str
    screens: Mapping[str, Screen] = field(default_factory=dict)
    interactions: tuple[Interaction, ...] = ()
    initial_screen: str | None = None

    def __post_init__(self) -> None:
        screens = dict(sorted(self.screens.items()))
        screens.setdefault(LAUNCHER, LAUNCHER_SCREEN)
        object.__setattr__(self, "screens", screens)
        object.__setattr__(self, "interactions", tuple(sorted(self.interactions, key=lambda e: e.id)))
        self._check()

    def _check(self) -> None:
        seen_ids: set[str] = set()
        seen_keys: set[str] = set()
        for sid, screen in self.screens.items():
            if sid != screen.id:
                raise StructuralError(f"screen keyed {sid!r} carries id {screen.id!r}")
        open_edges = []
        for e in self.interactions:
            if e.id in seen_ids:
                raise StructuralError(f"duplicate interaction id {e.id}")
            seen_ids.add(e.id)
            k = canonical_json(e.key())
            if k in seen_keys:
                raise StructuralError(f"duplicate interaction key for {e.id}")
            seen_keys.add(k)
            for end in (e.source, e.target):
                if end not in self.screens:
                    raise UnknownScreenError(f"interaction {e.id} references unknown screen {end}")
            if e.action == "open-app":
                if e.source != LAUNCHER:
                    raise StructuralError(f"open-app interaction {e.id} must start at the launcher")
                open_edges.append(e)
        if self.initial_screen is not None:
            if self.initial_screen not in self.screens or self.initial_screen == LAUNCHER:
                raise UnknownScreenError(f"initial screen {self.initial_screen} not in model")
            if [e.target for e in open_edges] != [self.initial_screen]:
                raise StructuralError("initial screen must be the target of exactly one open-app interaction")
        elif open_edges:
            raise StructuralError("open-app interaction present but no initial screen")

    @classmethod
    def empty(cls, app_id: str) -> "ExecutionModel":
        return cls(app_id)

    @cached_property
    def by_id(self) -> dict[str, Interaction]:
        return {e.id: e for e in self.interactions}

    @cached_property
    def outgoing(self) -> dict[str, list[Interaction]]:
        out: dict[str, list[Interaction]] = {sid: [] for sid in self.screens}
        for e in self.interactions:
            out[e.source].append(e)
        return out

    @property
    def open_app(self) -> Interaction | None:
        for e in self.outgoing.get(LAUNCHER, ()):
            if e.action == "open-app":
                return e
        return None

    def screen(self, screen_id: str) -> Screen:
        try:
            return self.screens[screen_id]
        except KeyError:
            raise UnknownScreenError(f"unknown screen {screen_id}") from None

    def interaction(self, interaction_id: str) -> Interaction:
        try:
            return self.by_id[interaction_id]
        except KeyError:
            raise KeyError(f"unknown interaction {interaction_id}") from None


# --------------------------------------------------------------------- traces


@dataclass(frozen=True)
class Snapshot:
    hierarchy: Hierarchy
    activity_name: str
    is_dialog: bool = False

    def screen(self) -> Screen:
        return Screen.build(self.hierarchy, self.activity_name, self.is_dialog)


@dataclass(frozen=True)
class TraceEvent:
    screen: Snapshot | None
    action: str
    result: Snapshot
    component: UiComponent | None = None
    input_text: str | None = None


@dataclass(frozen=True)
class Trace:
    app_id: str
    events: tuple[TraceEvent, ...]
    origin: str = "automated"

    def __post_init__(self) -> None:
        if not self.events:
            raise TraceError("trace has no events")
        if self.origin not in ("automated", "manual"):
            raise TraceError(f"unknown trace origin {self.origin!r}")
        for k in range(len(self.events) - 1):
            after = self.events[k].result.screen().id
            nxt = self.events[k + 1].screen
            if nxt is None or nxt.screen().id != after:
                raise TraceError(f"event {k + 1} does not start where event {k} ended")


_BOUNDS = {"type": "array", "items": {"type": "integer"}, "minItems": 4, "maxItems": 4}
_COMPONENT = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"type": "string", "minLength": 1},
        "resource_id": {"type": "string"},
        "label": {"type": "string"},
        "content_description": {"type": "string"},
        "bounds": _BOUNDS,
        "parent": {"type": ["integer", "null"]},
    },
}
_SNAPSHOT = {
    "type": "object",
    "required": ["activity", "hierarchy"],
    "properties": {
        "activity": {"type": "string"},
        "is_dialog": {"type": "boolean"},
        "hierarchy": {"type": "array", "items": _COMPONENT},
    },
}
TRACE_SCHEMA = {
    "type": "object",
    "required": ["app_id", "events"],
    "properties": {
        "app_id": {"type": "string", "minLength": 1},
        "origin": {"enum": ["automated", "manual"]},
        "events": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["action", "result_screen"],
                "properties": {
                    "screen": {"anyOf": [_SNAPSHOT, {"type": "null"}]},
                    "action": {"enum": list(ACTIONS)},
                    "component": _COMPONENT,
                    "input_text": {"type": "string"},
                    "result_screen": _SNAPSHOT,
                },
            },
        },
    },
}


def _hierarchy_from_json(items: Sequence[Mapping[str, Any]]) -> Hierarchy:
    return tuple(Node(UiComponent.from_json(c), c.get("parent")) for c in items)


def _snapshot_from_json(doc: Mapping[str, Any]) -> Snapshot:
    return Snapshot(_hierarchy_from_json(doc["hierarchy"]), doc["activity"], bool(doc.get("is_dialog", False)))


def _snapshot_to_json(snap: Snapshot) -> dict[str, Any]:
    return {
        "activity": snap.activity_name,
        "is_dialog": snap.is_dialog,
        "hierarchy": [{**n.component.to_json(), "parent": n.parent} for n in snap.hierarchy],
    }


def parse_trace(doc: Mapping[str, Any]) -> Trace:
    validate(doc, TRACE_SCHEMA)
    events = []
    for ev in doc["events"]:
        screen = ev.get("screen")
        events.append(
            TraceEvent(
                screen=_snapshot_from_json(screen) if screen is not None else None,
                action=ev["action"],
                result=_snapshot_from_json(ev["result_screen"]),
                component=UiComponent.from_json(ev["component"]) if "component" in ev else None,
                input_text=ev.get("input_text"),
            )
        )
    return Trace(doc["app_id"], tuple(events), doc.get("origin", "automated"))


def trace_to_json(trace: Trace) -> dict[str, Any]:
    events = []
    for ev in trace.events:
        item: dict[str, Any] = {
            "screen": _snapshot_to_json(ev.screen) if ev.screen is not None else None,
            "action": ev.action,
            "result_screen": _snapshot_to_json(ev.result),
        }
        if ev.component is not None:
            item["component"] = ev.component.to_json()
        if ev.input_text is not None:
            item["input_text"] = ev.input_text
        events.append(item)
    return {"app_id": trace.app_id, "origin": trace.origin, "events": events}


# Third-party explorer outputs are converted at the edge by a registered adapter.
TRACE_ADAPTERS: dict[str, Callable[[Mapping[str, Any]], Trace]] = {"bugscribe": parse_trace}


def register_trace_adapter(name: str):
    def deco(fn: Callable[[Mapping[str, Any]], Trace]):
        TRACE_ADAPTERS[name] = fn
        return fn

    return deco


# ----------------------------------------------------------------- building


def _union(
    app_id: str,
    screen_groups: Iterable[Iterable[Screen]],
    edge_groups: Iterable[Iterable[Interaction]],
    initial: str | None,
) -> ExecutionModel:
    screens: dict[str, Screen] = {}
    for group in screen_groups:
        for s in group:
            screens[s.id] = _prefer(screens[s.id], s) if s.id in screens else s
    edges: dict[str, Interaction] = {}
    for group in edge_groups:
        for e in group:
            edges[e.id] = _prefer(edges[e.id], e) if e.id in edges else e
    return ExecutionModel(app_id, screens, tuple(edges.values()), initial)


def ingest_trace(model: ExecutionModel, trace: Trace) -> ExecutionModel:
    """Return ``model`` extended with every screen and interaction in ``trace``."""
    if trace.app_id != model.app_id:
        raise AppMismatchError(f"trace for {trace.app_id!r} cannot extend model of {model.app_id!r}")
    new_screens: list[Screen] = []
    new_edges: list[Interaction] = []
    initial = model.initial_screen
    for k, ev in enumerate(trace.events):
        if ev.action == "open-app":
            source = LAUNCHER
        elif ev.screen is None:
            raise TraceError(f"event {k} ({ev.action}) has no source screen")
        else:
            src = ev.screen.screen()
            new_screens.append(src)
            source = src.id
        dst = ev.result.screen()
        new_screens.append(dst)
        if ev.action == "open-app":
            if initial is not None and initial != dst.id:
                raise MergeConflictError(f"open-app leads to {dst.id[:12]}, model starts at {initial[:12]}")
            initial = dst.id
        new_edges.append(Interaction.build(source, dst.id, ev.action, ev.component, ev.input_text))
    return _union(model.app_id, [model.screens.values(), new_screens], [model.interactions, new_edges], initial)


def build_model(app_id: str, traces: Iterable[Trace]) -> ExecutionModel:
    model = ExecutionModel.empty(app_id)
    for trace in traces:
        model = ingest_trace(model, trace)
    return model


def merge_models(a: ExecutionModel, b: ExecutionModel) -> ExecutionModel:
    if a.app_id != b.app_id:
        raise AppMismatchError(f"cannot merge models of {a.app_id!r} and {b.app_id!r}")
    if a.initial_screen and b.initial_screen and a.initial_screen != b.initial_screen:
        raise MergeConflictError("models disagree on the initial screen")
    initial = a.initial_screen or b.initial_screen
    return _union(a.app_id, [a.screens.values(), b.screens.values()], [a.interactions, b.interactions], initial)


# -------------------------------------------------------------------- paths


def _distances_to(model: ExecutionModel, target: str) -> dict[str, int]:
    incoming: dict[str, list[str]] = {}
    for e in model.interactions:
        incoming.setdefault(e.target, []).append(e.source)
    dist = {target: 0}
    queue = deque([target])
    while queue:
        cur = queue.popleft()
        for src in incoming.get(cur, ()):
            if src not in dist:
                dist[src] = dist[cur] + 1
                queue.append(src)
    return dist


def find_paths(
    model: ExecutionModel,
    source: str,
    target: str,
    max_len: int,
    limit: int | None = None,
) -> list[tuple[str, ...]]:
    """All edge-simple paths from ``source`` to ``target`` of at most ``max_len`` edges.

    Ordered by length, then lexicographically by interaction ids. Screens may
    be revisited; interactions may not. ``limit`` stops enumeration early,
    which matters on large models where the path count grows exponentially.
    """
    model.screen(source)
    model.screen(target)
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    dist = _distances_to(model, target)
    out = model.outgoing
    found: list[tuple[str, ...]] = []

    def extend(cur: str, remaining: int, path: list[str], used: set[str]) -> bool:
        if remaining == 0:
            if cur == target:
                found.append(tuple(path))
                return limit is not None and len(found) >= limit
            return False
        for e in out[cur]:
            if e.id in used or dist.get(e.target, remaining) > remaining - 1:
                continue
            used.add(e.id)
            path.append(e.id)
            stop = extend(e.target, remaining - 1, path, used)
            path.pop()
            used.discard(e.id)
            if stop:
                return True
        return False

    if source not in dist:
        return found
    for length in range(dist[source], max_len + 1):
        if extend(source, length, [], set()):
            break
    return found


@dataclass(frozen=True)
class PathValidation:
    valid: bool
    index: int | None = None
    reason: str = ""


def validate_path(model: ExecutionModel, steps: Sequence[str]) -> PathValidation:
    """Check that ``steps`` is a walk starting at the launcher or the initial screen."""
    if not steps:
        return PathValidation(False, 0, "empty path")
    prev: Interaction | None = None
    for i, sid in enumerate(steps):
        edge = model.by_id.get(sid)
        if edge is None:
            return PathValidation(False, i, f"unknown interaction {sid}")
        if prev is None:
            if edge.source not in (LAUNCHER, model.initial_screen):
                return PathValidation(False, i, "path does not start at the launcher or the initial screen")
        elif prev.target != edge.source:
            return PathValidation(False, i, f"{sid} does not start where {prev.id} ends")
        prev = edge
    return PathValidation(True)


# ------------------------------------------------------------ serialization

MODEL_SCHEMA = {
    "type": "object",
    "required": ["schema", "app_id", "screens", "interactions", "initial_screen"],
    "properties": {
        "schema": {"const": MODEL_SCHEMA_ID},
        "app_id": {"type": "string", "minLength": 1},
        "initial_screen": {"type": ["string", "null"]},
        "screens": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "activity", "is_dialog", "hierarchy"],
                "properties": {
                    "id": {"type": "string"},
                    "activity": {"type": "string"},
                    "is_dialog": {"type": "boolean"},
                    "description": {"type": "string"},
                    "hierarchy": {"type": "array", "items": _COMPONENT},
                },
            },
        },
        "interactions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "source", "target", "action"],
                "properties": {
                    "id": {"type": "string"},
                    "source": {"type": "string"},
                    "target": {"type": "string"},
                    "action": {"enum": list(ACTIONS)},
                    "component": _COMPONENT,
                    "input_text": {"type": "string"},
                },
            },
        },
    },
}


def model_to_json(model: ExecutionModel) -> dict[str, Any]:
    return {
        "schema": MODEL_SCHEMA_ID,
        "app_id": model.app_id,
        "initial_screen": model.initial_screen,
        "screens": [model.screens[sid].to_json() for sid in sorted(model.screens)],
        "interactions": [e.to_json() for e in model.interactions],
    }


def serialize_model(model: ExecutionModel) -> str:
    return pretty_json(model_to_json(model))


def deserialize_model(document: str | Mapping[str, Any]) -> ExecutionModel:
    import json

    doc = json.loads(document) if isinstance(document, str) else document
    validate(doc, MODEL_SCHEMA)
    screens: dict[str, Screen] = {}
    for i, s in enumerate(doc["screens"]):
        loc = f"/screens/{i}"
        try:
            hierarchy = _hierarchy_from_json(s["hierarchy"])
            if s["id"] == LAUNCHER:
                screen = LAUNCHER_SCREEN
            else:
                screen = Screen.build(hierarchy, s["activity"], s["is_dialog"], s.get("description"))
        except StructuralError as exc:
            raise SchemaError(str(exc), loc + "/hierarchy") from exc
        if screen.id != s["id"]:
            raise SchemaError("screen id does not match its hierarchy digest", loc + "/id")
        if screen.id in screens:
            raise SchemaError("duplicate screen id", loc + "/id")
        screens[screen.id] = screen
    edges = []
    for i, e in enumerate(doc["interactions"]):
        loc = f"/interactions/{i}"
        try:
            comp = UiComponent.from_json(e["component"]) if "component" in e else None
            edge = Interaction.build(e["source"], e["target"], e["action"], comp, e.get("input_text"))
        except StructuralError as exc:
            raise SchemaError(str(exc), loc) from exc
        if edge.id != e["id"]:
            raise SchemaError("interaction id does not match its key digest", loc + "/id")
        edges.append(edge)
    try:
        return ExecutionModel(doc["app_id"], screens, tuple(edges), doc["initial_screen"])
    except (StructuralError, UnknownScreenError) as exc:
        raise SchemaError(str(exc), "/") from exc
