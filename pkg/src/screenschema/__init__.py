"""Stateful screen schemas for GUI screen recordings.

Turns frame sequences into compact schemas (key frames, changed-region text,
cursor position), carries state across clips with an LSTM memory read by
cross-attention, and scores model output with captioning metrics.
"""

from .frameio import Clip, Frame, load_frame_directory
from .memory import LongTermMemory, MemoryConfig
from .schema import ScreenSchema, compose_schema, parse_schema, serialize_canonical

__all__ = [
    "Clip",
    "Frame",
    "LongTermMemory",
    "MemoryConfig",
    "ScreenSchema",
    "compose_schema",
    "load_frame_directory",
    "parse_schema",
    "serialize_canonical",
]
__version__ = "0.1.0"
