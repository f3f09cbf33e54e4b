"""Driving a multimodal LLM over a sequence of clips.

Backends take a :class:`GenRequest` and return a :class:`GenResponse`. The
answer must be a single JSON object with ``description``, ``category`` and
``tool``; anything else counts as a formatting failure.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import canonical
from .cursor import CnnParams
from .errors import (ArgumentError, BackendTimeout, ProtocolError,
                     ScreenSchemaError, ScriptingError, TransportError)
from .frameio import Clip
from .memory import LongTermMemory
from .ocr import OcrBackend
from .schema import SchemaConfig, ScreenSchema, compose_schema, render_prompt_schema
from .taxonomy import ToolTaxonomy, default_taxonomy

TASKS = ("current_action", "next_action")
PROMPT_VERSION = "1"

_ANSWER_FORMAT = (
    "Answer with a single JSON object and nothing else, using exactly these keys:\n"
    '{"description": "<one sentence>", "category": "<tool category>", "tool": "<tool name>"}\n'
)

PROMPT_TEMPLATES = {
    "current_action": (
        "You are watching a screen recording of a user working in a desktop application.\n"
        "The clip is summarized below as a screen schema: the text visible in the first "
        "frame, then the regions that changed in each key frame, with timestamps and "
        "cursor positions.\n\n"
        "Describe the action the user performs in this clip in one sentence and name "
        "the tool being used and its category.\n\n" + _ANSWER_FORMAT + "\nScreen schema:\n"
    ),
    "next_action": (
        "You are watching a screen recording of a user working in a desktop application.\n"
        "The clip is summarized below as a screen schema: the text visible in the first "
        "frame, then the regions that changed in each key frame, with timestamps and "
        "cursor positions.\n\n"
        "Predict the next action the user will take after this clip. Describe it in one "
        "sentence and name the tool the user will use and its category.\n\n"
        + _ANSWER_FORMAT + "\nScreen schema:\n"
    ),
}


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    schema_text: str
    temperature: float = 0.0
    top_p: float = 0.7
    max_tokens: int = 256

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ArgumentError("max_tokens must be at least 1")
        if self.temperature < 0:
            raise ArgumentError("temperature must be non-negative")

    def digest(self) -> str:
        doc = {
            "max_tokens": self.max_tokens,
            "prompt": self.prompt,
            "schema_text": self.schema_text,
            "temperature": self.temperature,
            "top_p": self.top_p,
        }
        return hashlib.sha256(canonical.dumps(doc).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class GenResponse:
    answer: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class ParsedAnswer:
    description: str
    category: str
    tool: str
    is_failure: bool

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "description": self.description,
            "is_failure": self.is_failure,
            "tool": self.tool,
        }


class GenerationBackend(Protocol):
    def generate(self, request: GenRequest, memory_embedding: np.ndarray | None = None) -> GenResponse:
        ...


def build_prompt(task: str, schema_text: str) -> str:
    if task not in PROMPT_TEMPLATES:
        raise ArgumentError(f"unknown task {task!r}; expected one of {TASKS}")
    return PROMPT_TEMPLATES[task] + schema_text


class MockBackend:
    """Scripted backend keyed by :meth:`GenRequest.digest`.

    Script values are either an answer string or ``{"answer": ..., "embedding": [[...]]}``.
    Unscripted requests get ``{}`` unless ``strict`` is set.
    """

    def __init__(self, script: Mapping[str, object] | None = None, strict: bool = False):
        self.script = dict(script or {})
        self.strict = strict
        self.requests: list[GenRequest] = []

    def generate(self, request: GenRequest, memory_embedding=None) -> GenResponse:
        self.requests.append(request)
        key = request.digest()
        if key not in self.script:
            if self.strict:
                raise ScriptingError(f"no scripted answer for request {key[:12]}")
            return GenResponse("{}")
        entry = self.script[key]
        if isinstance(entry, str):
            return GenResponse(entry)
        embedding = entry.get("embedding")
        if embedding is not None:
            embedding = np.asarray(embedding, dtype=np.float64)
        return GenResponse(entry["answer"], embedding)


class HttpBackend:
    """POSTs ``{model, prompt, temperature, top_p, max_tokens}`` and reads ``text``.

    Remote hidden states are not available, so responses carry no embedding.
    """

    def __init__(self, endpoint: str, model: str = "default", timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout

    @classmethod
    def from_env(cls, model: str = "default", timeout: float = 60.0) -> "HttpBackend":
        endpoint = os.environ.get("MLLM_ENDPOINT")
        if not endpoint:
            raise ArgumentError("MLLM_ENDPOINT is not set")
        return cls(endpoint, model, timeout)

    def generate(self, request: GenRequest, memory_embedding=None) -> GenResponse:
        body = json.dumps({
            "model": self.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, method="POST",
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"endpoint returned HTTP {exc.code}", status=exc.code) from None
        except (socket.timeout, TimeoutError):
            raise BackendTimeout(f"no response within {self.timeout}s") from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise BackendTimeout(f"no response within {self.timeout}s") from None
            raise TransportError(f"cannot reach {self.endpoint}: {exc.reason}") from None
        try:
            doc = json.loads(raw)
        except ValueError:
            raise ProtocolError("response body is not JSON") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
            raise ProtocolError("response body has no string 'text' field")
        return GenResponse(doc["text"])


def surrogate_embed(text: str, q_tokens: int, dim: int) -> np.ndarray:
    """Deterministic stand-in for generator hidden states, seeded by a text hash."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (q_tokens, dim))


def _first_object(text: str) -> str | None:
    start = text.find("{")
    if start < 0:
        return None
    depth, in_string, escaped = 0, False, False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def parse_answer(text: str, taxonomy: ToolTaxonomy | None = None) -> ParsedAnswer:
    """Classify a model answer; never raises."""
    taxonomy = taxonomy or default_taxonomy()
    block = _first_object(text or "")
    if block is None:
        return ParsedAnswer("", "", "", True)
    try:
        doc = json.loads(block)
    except ValueError:
        return ParsedAnswer("", "", "", True)
    if not isinstance(doc, dict):
        return ParsedAnswer("", "", "", True)
    fields = {key: doc.get(key) for key in ("description", "category", "tool")}
    ok = all(isinstance(v, str) for v in fields.values())
    kept = {k: (v if isinstance(v, str) else "") for k, v in fields.items()}
    ok = ok and taxonomy.validate(kept["category"], kept["tool"])
    return ParsedAnswer(kept["description"], kept["category"], kept["tool"], not ok)


def embedding_digest(matrix: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(matrix, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class TranscriptStep:
    step: int
    clip_id: str
    schema: ScreenSchema
    prompt: str
    answer: str
    parsed: ParsedAnswer
    e_prime_digest: str

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "clip_id": self.clip_id,
            "e_prime_digest": self.e_prime_digest,
            "parsed": self.parsed.to_dict(),
            "prompt": self.prompt,
            "schema": self.schema.to_dict(),
            "step": self.step,
        }


class SessionError(ScreenSchemaError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


def session_run(clips: Sequence[Clip], backend: GenerationBackend, memory: LongTermMemory,
                task: str, ocr: OcrBackend | Mapping[str, OcrBackend],
                schema_cfg: SchemaConfig | None = None, cursor_params: CnnParams | None = None,
                vocab: Sequence[str] = (), taxonomy: ToolTaxonomy | None = None,
                decode: Mapping[str, float] | None = None) -> list[TranscriptStep]:
    """Run the clip loop: schema, prompt, generate, parse, memory update.

    ``ocr`` may be one backend for every clip or a mapping from clip id to backend.
    The memory output of each step is handed to the backend on the next step.
    """
    if not clips:
        raise ArgumentError("session needs at least one clip")
    if task not in PROMPT_TEMPLATES:
        raise ArgumentError(f"unknown task {task!r}; expected one of {TASKS}")
    schema_cfg = schema_cfg or SchemaConfig()
    decode = dict(decode or {})
    q, d = memory.config.q_tokens, memory.config.dim
    transcript = []
    carried = None
    for t, clip in enumerate(clips):
        try:
            clip_ocr = ocr[clip.clip_id] if isinstance(ocr, Mapping) else ocr
            schema = compose_schema(clip, schema_cfg.k, clip_ocr, cursor_params, vocab, schema_cfg)
            schema_text = render_prompt_schema(schema)
            prompt = build_prompt(task, schema_text)
            request = GenRequest(prompt, schema_text, **decode)
            response = backend.generate(request, memory_embedding=carried)
            embedding = response.embedding
            if embedding is None:
                embedding = surrogate_embed(response.answer + schema_text, q, d)
            carried = memory.step(embedding)
        except (ScreenSchemaError, KeyError) as exc:
            raise SessionError(t, exc) from exc
        transcript.append(TranscriptStep(
            step=t, clip_id=clip.clip_id, schema=schema, prompt=prompt,
            answer=response.answer, parsed=parse_answer(response.answer, taxonomy),
            e_prime_digest=embedding_digest(carried),
        ))
    return transcript


def transcript_bytes(transcript: Sequence[TranscriptStep]) -> bytes:
    return b"".join(canonical.dump_bytes(step.to_dict()) for step in transcript)
