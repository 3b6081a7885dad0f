"""Provider-agnostic completion gateway with prompt templates and record/replay fixtures.

Every LLM-backed stage goes through :class:`Gateway`. In ``replay`` mode the
gateway answers from stored fixtures only and never touches the network, so
the whole pipeline is a pure function of its inputs and the fixture set.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import BindingError, FormatError, MissingFixtureError, TransportError
from .jsonio import atomic_write_text, canonical_json, pretty_json, read_json, sha256_hex

logger = logging.getLogger(__name__)

MODES = ("replay", "record", "live")
_PLACEHOLDER = re.compile(r"\{\{\s*([a-z_][a-z0-9_]*)\s*\}\}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    sections: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        owner: dict[str, str] = {}
        for name, text in self.sections:
            for ph in _PLACEHOLDER.findall(text):
                if ph in owner:
                    raise BindingError(
                        f"placeholder {ph!r} appears in sections {owner[ph]!r} and {name!r} of {self.template_id}"
                    )
                owner[ph] = name

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(ph for _, text in self.sections for ph in _PLACEHOLDER.findall(text))

    @property
    def section_names(self) -> list[str]:
        return [name for name, _ in self.sections]


def parse_template(template_id: str, text: str) -> PromptTemplate:
    """Sections start at lines of the form ``## Name``; text before the first is untitled."""
    sections: list[tuple[str, list[str]]] = [("", [])]
    for line in text.splitlines():
        if line.startswith("## "):
            sections.append((line[3:].strip(), []))
        else:
            sections[-1][1].append(line)
    out = tuple((name, "\n".join(lines).strip()) for name, lines in sections if name or "".join(lines).strip())
    return PromptTemplate(template_id, out)


@lru_cache(maxsize=None)
def _packaged_template(template_id: str) -> PromptTemplate:
    ref = resources.files("bugscribe").joinpath("prompts", f"{template_id}.txt")
    if not ref.is_file():
        raise BindingError(f"no prompt template named {template_id!r}")
    return parse_template(template_id, ref.read_text(encoding="utf-8"))


def load_template(template_id: str, root: str | os.PathLike | None = None) -> PromptTemplate:
    if root is None:
        return _packaged_template(template_id)
    path = Path(root) / f"{template_id}.txt"
    if not path.is_file():
        raise BindingError(f"no prompt template {path}")
    return parse_template(template_id, path.read_text(encoding="utf-8"))


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    missing = sorted(template.required_placeholders - set(bindings))
    if missing:
        raise BindingError(f"template {template.template_id!r} is missing bindings: {', '.join(missing)}")

    def sub(m: re.Match) -> str:
        return str(bindings[m.group(1)])

    blocks = []
    for name, text in template.sections:
        body = _PLACEHOLDER.sub(sub, text)
        blocks.append(f"## {name}\n{body}" if name else body)
    return "\n\n".join(blocks) + "\n"


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    bindings: Mapping[str, str]
    expected_format: str = "json"
    model_hint: str = ""

    def digest_inputs(self) -> dict[str, Any]:
        return {
            "template_id": self.template_id,
            "bindings": {k: str(v) for k, v in sorted(self.bindings.items())},
            "expected_format": self.expected_format,
        }


@dataclass(frozen=True)
class CompletionResult:
    raw_text: str
    parsed: Any = None
    fixture_hit: bool = False
    key: str = ""


def fixture_key(request: CompletionRequest) -> str:
    return sha256_hex(canonical_json(request.digest_inputs()))


_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.S)


def parse_json_response(raw: str) -> Any:
    """Parse a JSON answer, allowing one repair pass: fence stripping and prose trimming."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    candidate = raw
    fence = _FENCE.search(raw)
    if fence:
        candidate = fence.group(1)
    starts = [i for i in (candidate.find("{"), candidate.find("[")) if i >= 0]
    if starts:
        start = min(starts)
        end = max(candidate.rfind("}"), candidate.rfind("]"))
        candidate = candidate[start : end + 1]
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model output is not valid JSON: {exc.msg}", raw) from None


class FixtureStore:
    """``<root>/<template_id>/<key>.json`` files mapping request digests to raw completions."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)

    def path(self, request: CompletionRequest, key: str | None = None) -> Path:
        return self.root / request.template_id / f"{key or fixture_key(request)}.json"

    def get(self, request: CompletionRequest) -> str | None:
        path = self.path(request)
        if not path.is_file():
            return None
        return read_json(path)["raw_text"]

    def put(self, request: CompletionRequest, raw_text: str, *, force: bool = False) -> Path:
        path = self.path(request)
        if path.exists() and not force:
            raise FileExistsError(f"fixture {path} exists; pass force to overwrite")
        doc = {
            "request_digest_inputs": request.digest_inputs(),
            "raw_text": raw_text,
            "recorded_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        atomic_write_text(path, pretty_json(doc))
        return path


class TokenBucket:
    def __init__(self, per_minute: float, capacity: int | None = None) -> None:
        self.rate = per_minute / 60.0
        self.capacity = capacity or max(1, int(per_minute // 6) or 1)
        self.tokens = float(self.capacity)
        self.stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            time.sleep(wait)


Provider = Callable[[str, CompletionRequest], str]


class HttpProvider:
    """OpenAI-compatible chat-completions client configured from ``BUGSCRIBE_*`` variables."""

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        *,
        max_retries: int = 4,
        base_backoff: float = 1.0,
        max_backoff: float = 30.0,
        requests_per_minute: float = 30.0,
        timeout: float = 120.0,
    ) -> None:
        self.api_base = (api_base or os.environ.get("BUGSCRIBE_API_BASE") or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key or os.environ.get("BUGSCRIBE_API_KEY")
        self.model = model or os.environ.get("BUGSCRIBE_MODEL") or "gpt-4o"
        if not self.api_key:
            raise TransportError("BUGSCRIBE_API_KEY is not set; live and record modes need it")
        self.max_retries = max_retries
        self.base_backoff = base_backoff
        self.max_backoff = max_backoff
        self.timeout = timeout
        self.bucket = TokenBucket(requests_per_minute)

    def __call__(self, prompt: str, request: CompletionRequest) -> str:
        import requests

        payload = {
            "model": request.model_hint or self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        if request.expected_format == "json":
            payload["response_format"] = {"type": "json_object"}
        headers = {"Authorization": f"Bearer {self.api_key}"}
        attempt = 0
        while True:
            self.bucket.acquire()
            try:
                resp = requests.post(f"{self.api_base}/chat/completions", json=payload, headers=headers, timeout=self.timeout)
                if resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, TransportError, KeyError, ValueError) as exc:
                attempt += 1
                if attempt > self.max_retries:
                    raise TransportError(f"completion failed after {attempt} attempts: {exc}") from exc
                delay = min(self.max_backoff, self.base_backoff * 2 ** (attempt - 1))
                logger.warning("completion attempt %d failed (%s); retrying in %.1fs", attempt, exc, delay)
                time.sleep(delay)


@dataclass
class Gateway:
    mode: str = "replay"
    fixtures: str | os.PathLike | None = None
    provider: Provider | None = None
    templates_dir: str | os.PathLike | None = None
    force: bool = False
    live_calls: int = 0
    fixture_hits: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown gateway mode {self.mode!r}")
        if self.fixtures is None:
            from .data import sample_root

            self.fixtures = sample_root() / "fixtures"
        self.store = FixtureStore(self.fixtures)

    def template(self, template_id: str) -> PromptTemplate:
        return load_template(template_id, self.templates_dir)

    def prompt(self, request: CompletionRequest) -> str:
        return render_prompt(self.template(request.template_id), request.bindings)

    def _provider(self) -> Provider:
        if self.provider is None:
            self.provider = HttpProvider()
        return self.provider

    def _live(self, prompt: str, request: CompletionRequest) -> str:
        raw = self._provider()(prompt, request)
        with self._lock:
            self.live_calls += 1
        return raw

    def complete(self, request: CompletionRequest, mode: str | None = None) -> CompletionResult:
        mode = mode or self.mode
        prompt = self.prompt(request)  # binding errors surface in every mode
        key = fixture_key(request)
        hit = False
        if mode == "replay":
            raw = self.store.get(request)
            if raw is None:
                raise MissingFixtureError(key, request.template_id)
            hit = True
        elif mode == "record":
            raw = None if self.force else self.store.get(request)
            if raw is None:
                raw = self._live(prompt, request)
                self.store.put(request, raw, force=True)
            else:
                hit = True
        elif mode == "live":
            raw = self._live(prompt, request)
        else:
            raise ValueError(f"unknown gateway mode {mode!r}")
        if hit:
            with self._lock:
                self.fixture_hits += 1
        parsed = parse_json_response(raw) if request.expected_format == "json" else None
        return CompletionResult(raw, parsed, hit, key)
