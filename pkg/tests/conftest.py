import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from builders import POPUP_OCR, make_clip, popup_frames, session_rasters  # noqa: E402
from screenschema.frameio import Frame, write_frame_directory  # noqa: E402
from screenschema.ocr import MockOcr  # noqa: E402


@pytest.fixture
def popup_clip():
    return make_clip(popup_frames(), "popup")


@pytest.fixture
def popup_ocr():
    return MockOcr.from_entries(POPUP_OCR)


@pytest.fixture
def popup_dir(tmp_path):
    path = tmp_path / "popup"
    write_frame_directory(path, [Frame(r) for r in popup_frames()])
    return path


@pytest.fixture
def session_root(tmp_path):
    root = tmp_path / "session"
    for name, rasters in session_rasters().items():
        write_frame_directory(root / name, [Frame(r) for r in rasters])
    return root
