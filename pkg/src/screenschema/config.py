"""Run configuration: defaults, optional JSON file, command-line overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .errors import ArgumentError


@dataclass(frozen=True)
class Config:
    delta: int = 30
    k: int = 5
    min_area: int = 25
    merge_gap: int = 4
    q: int = 4
    d: int = 8
    alpha: float = 0.5
    seed: int = 42
    fps: float = 10
    ocr_cmd: str | None = None
    ocr_timeout: float = 10.0
    mllm_endpoint: str | None = None
    mllm_model: str = "default"
    mllm_timeout: float = 60.0
    temperature: float = 0.0
    top_p: float = 0.7
    max_tokens: int = 256

    def validate(self) -> "Config":
        if not 0 <= self.delta <= 255:
            raise ArgumentError("delta must be within 0..255")
        if self.k < 1:
            raise ArgumentError("k must be at least 1")
        if self.min_area < 1 or self.merge_gap < 0:
            raise ArgumentError("min_area must be >= 1 and merge_gap >= 0")
        if self.q < 1 or self.d < 1:
            raise ArgumentError("q and d must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError("alpha must be within [0, 1]")
        if Fraction(self.fps) <= 0:
            raise ArgumentError("fps must be positive")
        if self.temperature < 0 or self.max_tokens < 1 or not 0.0 < self.top_p <= 1.0:
            raise ArgumentError("invalid decoding parameters")
        return self

    def decode(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p, "max_tokens": self.max_tokens}

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then ``OCR_CMD``/``MLLM_ENDPOINT``, then the file, then overrides."""
    cfg = Config()
    env = {}
    if os.environ.get("OCR_CMD"):
        env["ocr_cmd"] = os.environ["OCR_CMD"]
    if os.environ.get("MLLM_ENDPOINT"):
        env["mllm_endpoint"] = os.environ["MLLM_ENDPOINT"]
    cfg = replace(cfg, **env)
    known = {f.name for f in fields(Config)}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ArgumentError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ArgumentError(f"config {path} must be a JSON object")
        unknown = set(data) - known
        if unknown:
            raise ArgumentError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = replace(cfg, **data)
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None and k in known})
    return cfg.validate()
