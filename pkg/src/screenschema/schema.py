"""Stateful screen schema: composition, canonical serialization, prompt rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

from . import canonical
from .cursor import CnnParams, detect_cursor
from .errors import BackendError, SizeError, ValidationError, VersionError
from .frameio import Clip
from .keyframe import select_keyframes
from .ocr import MATCH_THRESHOLD, OcrBackend, match_menu_item
from .regions import (DEFAULT_DELTA, DEFAULT_MERGE_GAP, DEFAULT_MIN_AREA, Rect,
                      changed_regions)

VERSION = "1"
SOURCES = ("initial_frame", "changed_region")


def _quantized(value: float) -> float:
    # scores live at 4-decimal precision so parse(serialize(s)) == s
    value = float(value)
    return canonical.quantize4(value) if math.isfinite(value) else value


@dataclass(frozen=True)
class ElementEntry:
    bbox: Rect
    text: str
    confidence: float
    source: str
    matched_item: str | None = None
    match_score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "confidence", _quantized(self.confidence))
        if self.match_score is not None:
            object.__setattr__(self, "match_score", _quantized(self.match_score))

    def sort_key(self):
        return (self.bbox.y, self.bbox.x, self.text)

    def to_dict(self) -> dict:
        return {
            "bbox": self.bbox.as_list(),
            "confidence": self.confidence,
            "match_score": self.match_score,
            "matched_item": self.matched_item,
            "source": self.source,
            "text": self.text,
        }


@dataclass(frozen=True)
class CursorPoint:
    x: int
    y: int
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "confidence", _quantized(self.confidence))


@dataclass(frozen=True)
class FrameEntry:
    index: int
    timestamp_ms: int
    is_initial: bool
    cursor: CursorPoint | None = None
    elements: tuple[ElementEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def to_dict(self) -> dict:
        cursor = None
        if self.cursor is not None:
            cursor = {"confidence": self.cursor.confidence, "x": self.cursor.x, "y": self.cursor.y}
        return {
            "cursor": cursor,
            "elements": [e.to_dict() for e in self.elements],
            "index": self.index,
            "is_initial": self.is_initial,
            "timestamp_ms": self.timestamp_ms,
        }


@dataclass(frozen=True)
class ScreenSchema:
    clip_id: str
    resolution: tuple[int, int]
    clip_span: tuple[int, int]
    frames: tuple[FrameEntry, ...]
    version: str = VERSION

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(self.resolution))
        object.__setattr__(self, "clip_span", tuple(self.clip_span))
        object.__setattr__(self, "frames", tuple(self.frames))

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "clip_span": list(self.clip_span),
            "frames": [f.to_dict() for f in self.frames],
            "resolution": list(self.resolution),
            "version": self.version,
        }


@dataclass(frozen=True)
class SchemaConfig:
    k: int = 5
    delta: int = DEFAULT_DELTA
    min_area: int = DEFAULT_MIN_AREA
    merge_gap: int = DEFAULT_MERGE_GAP


# -- composition -----------------------------------------------------------

def _elements(results, source: str, vocab: Sequence[str]) -> list[ElementEntry]:
    out = []
    for r in results:
        matched = match_menu_item(r.text, vocab) if vocab else None
        out.append(ElementEntry(
            bbox=r.bbox, text=r.text, confidence=r.confidence, source=source,
            matched_item=matched[0] if matched else None,
            match_score=matched[1] if matched else None,
        ))
    return out


def _recognize(ocr: OcrBackend, frame, rect: Rect):
    try:
        return ocr.recognize(frame, rect)
    except BackendError as exc:
        raise type(exc)(f"OCR failed on frame {frame.index} rect {rect.as_list()}: {exc}") from exc


def compose_schema(clip: Clip, k: int | None, ocr: OcrBackend,
                   cursor_params: CnnParams | None = None,
                   vocab: Sequence[str] = (), cfg: SchemaConfig | None = None) -> ScreenSchema:
    """Build the schema for one clip.

    The first frame is read in full; each key frame contributes only the
    text inside regions that changed relative to its predecessor.
    """
    cfg = cfg or SchemaConfig()
    k = cfg.k if k is None else k
    if len(clip) < 3:
        raise SizeError(f"clip {clip.clip_id!r} needs at least 3 frames, has {len(clip)}")
    vocab = list(vocab)

    first = clip.frames[0]
    full = Rect.xywh(0, 0, clip.width, clip.height)
    entries = [FrameEntry(
        index=first.index, timestamp_ms=first.timestamp_ms, is_initial=True,
        elements=sorted(_elements(_recognize(ocr, first, full), "initial_frame", vocab),
                        key=ElementEntry.sort_key),
    )]

    for t in select_keyframes(clip, k).indices:
        prev, cur = clip.frames[t - 1], clip.frames[t]
        elements = []
        for rect in changed_regions(prev, cur, cfg.delta, cfg.min_area, cfg.merge_gap):
            elements.extend(_elements(_recognize(ocr, cur, rect), "changed_region", vocab))
        cursor = None
        if cursor_params is not None:
            pred = detect_cursor(cursor_params, cur)
            cursor = CursorPoint(pred.x, pred.y, pred.confidence)
        entries.append(FrameEntry(
            index=cur.index, timestamp_ms=cur.timestamp_ms, is_initial=False,
            cursor=cursor, elements=sorted(elements, key=ElementEntry.sort_key),
        ))

    return ScreenSchema(
        clip_id=clip.clip_id,
        resolution=(clip.width, clip.height),
        clip_span=(clip.start_ms, clip.end_ms),
        frames=tuple(entries),
    )


# -- serialization ---------------------------------------------------------

def serialize_canonical(schema: ScreenSchema) -> bytes:
    payload = canonical.dump_bytes(schema.to_dict())  # rejects non-finite scores first
    validate_schema(schema)
    return payload


def _req(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ValidationError(f"{where}.{key}: missing")
    value = obj[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ValidationError(f"{where}.{key}: expected an integer")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ValidationError(f"{where}.{key}: expected a number")
    if kind in (str, bool, list) and not isinstance(value, kind):
        raise ValidationError(f"{where}.{key}: expected {kind.__name__}")
    return float(value) if kind is float else value


def _opt(obj, key, kind, where):
    if obj.get(key) is None:
        return None
    return _req(obj, key, kind, where)


def _int_pair(obj, key, where):
    pair = _req(obj, key, list, where)
    if len(pair) != 2 or any(isinstance(v, bool) or not isinstance(v, int) for v in pair):
        raise ValidationError(f"{where}.{key}: expected two integers")
    return tuple(pair)


def _parse_rect(obj, where) -> Rect:
    box = _req(obj, "bbox", list, where)
    if len(box) != 4 or any(isinstance(v, bool) or not isinstance(v, int) for v in box):
        raise ValidationError(f"{where}.bbox: expected four integers")
    try:
        return Rect.xywh(*box)
    except ValueError as exc:
        raise ValidationError(f"{where}.bbox: {exc}") from None


def parse_schema(data: bytes | str) -> ScreenSchema:
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"schema is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("schema: expected an object")
    version = _req(doc, "version", str, "schema")
    if version != VERSION:
        raise VersionError(f"unsupported schema version {version!r}")

    frames = []
    for fi, fobj in enumerate(_req(doc, "frames", list, "schema")):
        fw = f"frames[{fi}]"
        elements = []
        for ei, eobj in enumerate(_req(fobj, "elements", list, fw)):
            ew = f"{fw}.elements[{ei}]"
            elements.append(ElementEntry(
                bbox=_parse_rect(eobj, ew),
                text=_req(eobj, "text", str, ew),
                confidence=_req(eobj, "confidence", float, ew),
                source=_req(eobj, "source", str, ew),
                matched_item=_opt(eobj, "matched_item", str, ew),
                match_score=_opt(eobj, "match_score", float, ew),
            ))
        cursor = None
        if fobj.get("cursor") is not None:
            cobj, cw = fobj["cursor"], f"{fw}.cursor"
            cursor = CursorPoint(_req(cobj, "x", int, cw), _req(cobj, "y", int, cw),
                                 _req(cobj, "confidence", float, cw))
        frames.append(FrameEntry(
            index=_req(fobj, "index", int, fw),
            timestamp_ms=_req(fobj, "timestamp_ms", int, fw),
            is_initial=_req(fobj, "is_initial", bool, fw),
            cursor=cursor,
            elements=tuple(elements),
        ))
    schema = ScreenSchema(
        clip_id=_req(doc, "clip_id", str, "schema"),
        resolution=_int_pair(doc, "resolution", "schema"),
        clip_span=_int_pair(doc, "clip_span", "schema"),
        frames=tuple(frames),
        version=version,
    )
    validate_schema(schema)
    return schema


def validate_schema(schema: ScreenSchema) -> None:
    """Raise ValidationError naming the first field that breaks an invariant."""
    if schema.version != VERSION:
        raise VersionError(f"unsupported schema version {schema.version!r}")
    width, height = schema.resolution
    if width < 1 or height < 1:
        raise ValidationError("schema.resolution: dimensions must be positive")
    start, end = schema.clip_span
    if start < 0 or start > end:
        raise ValidationError("schema.clip_span: expected 0 <= start <= end")
    if not schema.frames:
        raise ValidationError("schema.frames: must contain the initial frame")
    prev_index = None
    for fi, frame in enumerate(schema.frames):
        fw = f"frames[{fi}]"
        if frame.is_initial != (fi == 0):
            raise ValidationError(f"{fw}.is_initial: only the first entry is the initial frame")
        if prev_index is not None and frame.index <= prev_index:
            raise ValidationError(f"{fw}.index: key frames must be in ascending order")
        prev_index = frame.index
        if not start <= frame.timestamp_ms <= end:
            raise ValidationError(f"{fw}.timestamp_ms: outside clip_span")
        if frame.cursor is not None:
            c = frame.cursor
            if not (0 <= c.x < width and 0 <= c.y < height):
                raise ValidationError(f"{fw}.cursor: outside the frame")
            if not 0.0 <= c.confidence <= 1.0:
                raise ValidationError(f"{fw}.cursor.confidence: outside [0, 1]")
        keys = [e.sort_key() for e in frame.elements]
        if keys != sorted(keys):
            raise ValidationError(f"{fw}.elements: not sorted by (y, x, text)")
        for ei, el in enumerate(frame.elements):
            ew = f"{fw}.elements[{ei}]"
            if not el.text:
                raise ValidationError(f"{ew}.text: must be non-empty")
            if not el.bbox.within(width, height):
                raise ValidationError(f"{ew}.bbox: outside the frame")
            if not 0.0 <= el.confidence <= 1.0:
                raise ValidationError(f"{ew}.confidence: outside [0, 1]")
            if el.source not in SOURCES:
                raise ValidationError(f"{ew}.source: unknown source {el.source!r}")
            if (el.matched_item is None) != (el.match_score is None):
                field_name = "matched_item" if el.matched_item is None else "match_score"
                raise ValidationError(f"{ew}.{field_name}: matched_item and match_score go together")
            if el.match_score is not None and not MATCH_THRESHOLD <= el.match_score <= 1.0:
                raise ValidationError(f"{ew}.match_score: below the match threshold")


# -- prompt rendering ------------------------------------------------------

def render_prompt_schema(schema: ScreenSchema) -> str:
    width, height = schema.resolution
    start, end = schema.clip_span
    lines = [f"screen {width}x{height} span={start}-{end}ms"]
    for frame in schema.frames:
        cursor = "none" if frame.cursor is None else f"({frame.cursor.x},{frame.cursor.y})"
        lines.append(f"t={frame.timestamp_ms} cursor={cursor}")
        for el in frame.elements:
            b = el.bbox
            line = f"  [{b.y},{b.x},{b.w},{b.h}] {json.dumps(el.text, ensure_ascii=False)}"
            if el.matched_item is not None:
                line += f" (-> {el.matched_item})"
            lines.append(line)
    return "\n".join(lines) + "\n"
