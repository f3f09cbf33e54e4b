"""Canonical JSON text: sorted keys, no whitespace, floats as 4-decimal literals.

Reals are rendered from their shortest round-trip decimal form, rounded half
to even at four places, so ``0.85`` becomes ``0.8500`` on every platform.
"""

from __future__ import annotations

import json
import math
from decimal import ROUND_HALF_EVEN, Decimal

from .errors import SerializationError

_PLACES = Decimal("0.0001")


def format_fixed4(value: float) -> str:
    if not math.isfinite(value):
        raise SerializationError(f"non-finite number {value!r} cannot be serialized")
    text = str(Decimal(repr(float(value))).quantize(_PLACES, rounding=ROUND_HALF_EVEN))
    return "0.0000" if text == "-0.0000" else text


def quantize4(value: float) -> float:
    return float(format_fixed4(value))


def _encode(value, out: list) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_fixed4(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise SerializationError(f"object key {key!r} is not a string")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise SerializationError(f"cannot serialize {type(value).__name__}")


def dumps(value) -> str:
    out: list = []
    _encode(value, out)
    return "".join(out)


def dump_bytes(value) -> bytes:
    """Canonical UTF-8 document with exactly one trailing newline."""
    return (dumps(value) + "\n").encode("utf-8")
