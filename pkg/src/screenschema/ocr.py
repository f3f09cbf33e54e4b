"""OCR backends and menu-vocabulary matching.

Any OCR engine can be plugged in as a child process. The child receives the
cropped region as a binary PGM on stdin and prints one JSON object per
recognized text line on stdout::

    {"text": "File", "x": 1, "y": 2, "w": 20, "h": 10, "conf": 0.97}

Coordinates are relative to the crop; they are translated back to frame
coordinates here.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import ArgumentError, BackendError, BackendTimeout, ValidationError
from .frameio import Frame, encode_pgm
from .regions import Rect

MATCH_THRESHOLD = 0.8
DEFAULT_TIMEOUT = 10.0


@dataclass(frozen=True)
class OcrResult:
    text: str
    bbox: Rect
    confidence: float

    def __post_init__(self):
        if not self.text:
            raise ValidationError("OCR text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"OCR confidence {self.confidence} outside [0, 1]")


class OcrBackend(Protocol):
    def recognize(self, frame: Frame, rect: Rect) -> list[OcrResult]:
        ...


def crop(frame: Frame, rect: Rect) -> Frame:
    if not rect.within(frame.width, frame.height):
        raise ArgumentError(f"{rect} lies outside the {frame.width}x{frame.height} frame")
    return Frame(frame.luma[rect.y:rect.bottom, rect.x:rect.right], frame.timestamp_ms, frame.index)


class MockOcr:
    """Scripted OCR: returns fixed results for ``(frame_index, rect)`` keys."""

    def __init__(self, script: Mapping[tuple[int, Rect], Sequence[OcrResult]] | None = None):
        self.script = {}
        for (index, rect), results in (script or {}).items():
            results = list(results)
            for r in results:
                if not rect.contains(r.bbox):
                    raise ValidationError(
                        f"scripted bbox {r.bbox} for frame {index} lies outside {rect}"
                    )
            self.script[(index, rect)] = results

    def recognize(self, frame: Frame, rect: Rect) -> list[OcrResult]:
        return list(self.script.get((frame.index, rect), []))

    @classmethod
    def from_entries(cls, entries: Iterable[Mapping]) -> "MockOcr":
        """Build from JSON-style entries.

        Each entry is ``{"frame": i, "rect": [x, y, w, h], "results": [...]}``
        with result boxes given in frame coordinates.
        """
        script = {}
        for entry in entries:
            rect = Rect.xywh(*entry["rect"])
            script[(int(entry["frame"]), rect)] = [
                OcrResult(r["text"], Rect.xywh(r["x"], r["y"], r["w"], r["h"]), float(r.get("conf", 1.0)))
                for r in entry.get("results", [])
            ]
        return cls(script)


def _parse_result_line(line: str, rect: Rect) -> OcrResult:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("result line is not an object")
    text = obj["text"]
    if not isinstance(text, str):
        raise ValueError("text is not a string")
    x, y, w, h = (obj[key] for key in ("x", "y", "w", "h"))
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in (x, y, w, h)):
        raise ValueError("coordinates must be integers")
    bbox = Rect.xywh(rect.x + x, rect.y + y, w, h)
    if not rect.contains(bbox):
        raise ValueError(f"box {x},{y},{w},{h} falls outside the {rect.w}x{rect.h} crop")
    return OcrResult(text, bbox, float(obj["conf"]))


class ExternalProcessOcr:
    """Runs one child process per ``recognize`` call."""

    def __init__(self, cmd: str | Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        self.argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not self.argv:
            raise ArgumentError("empty OCR command")
        self.timeout = timeout

    @classmethod
    def from_env(cls, timeout: float = DEFAULT_TIMEOUT) -> "ExternalProcessOcr":
        cmd = os.environ.get("OCR_CMD")
        if not cmd:
            raise ArgumentError("OCR_CMD is not set")
        return cls(cmd, timeout)

    def recognize(self, frame: Frame, rect: Rect) -> list[OcrResult]:
        payload = encode_pgm(crop(frame, rect))
        try:
            proc = subprocess.run(
                self.argv, input=payload, capture_output=True, timeout=self.timeout
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendTimeout(
                f"OCR command timed out after {self.timeout}s; stderr: {_excerpt(exc.stderr)}"
            ) from None
        except OSError as exc:
            raise BackendError(f"cannot launch OCR command {self.argv[0]!r}: {exc}") from None
        if proc.returncode != 0:
            raise BackendError(
                f"OCR command exited with status {proc.returncode}; stderr: {_excerpt(proc.stderr)}"
            )
        results = []
        for lineno, raw in enumerate(proc.stdout.decode("utf-8", "replace").splitlines(), 1):
            if not raw.strip():
                continue
            try:
                results.append(_parse_result_line(raw, rect))
            except (ValueError, KeyError, TypeError, ValidationError) as exc:
                raise BackendError(
                    f"malformed OCR output line {lineno}: {exc}; stderr: {_excerpt(proc.stderr)}"
                ) from None
        return results


def _excerpt(stderr, limit: int = 200) -> str:
    if not stderr:
        return "<empty>"
    if isinstance(stderr, bytes):
        stderr = stderr.decode("utf-8", "replace")
    stderr = stderr.strip()
    return stderr if len(stderr) <= limit else stderr[:limit] + "..."


# -- vocabulary matching ---------------------------------------------------

def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    a, b = normalize_text(a), normalize_text(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def match_menu_item(text: str, vocabulary: Sequence[str],
                    threshold: float = MATCH_THRESHOLD) -> tuple[str, float] | None:
    """Best vocabulary entry by normalized edit similarity, or None below threshold.

    Ties keep the entry that appears first in ``vocabulary``.
    """
    if not vocabulary:
        raise ArgumentError("vocabulary must be non-empty")
    if not normalize_text(text):
        raise ArgumentError("text to match must be non-empty")
    best = None
    for item in vocabulary:
        score = similarity(text, item)
        if best is None or score > best[1]:
            best = (item, score)
    if best[1] >= threshold:
        return best
    return None
