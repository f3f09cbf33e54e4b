import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from screenschema.errors import ArgumentError, BackendError, BackendTimeout, ValidationError
from screenschema.frameio import Frame, decode_pgm, encode_pgm
from screenschema.ocr import (ExternalProcessOcr, MockOcr, OcrResult, crop, levenshtein,
                              match_menu_item, normalize_text, similarity)
from screenschema.regions import Rect

CHILD = Path(__file__).parent / "ocr_child.py"


def child(mode, timeout=10.0):
    return ExternalProcessOcr([sys.executable, str(CHILD), mode], timeout)


@pytest.fixture
def frame():
    rng = np.random.default_rng(0)
    return Frame(rng.integers(0, 256, size=(120, 200)).astype(np.uint8), 0, 3)


def test_external_translates_coordinates(frame):
    got = child("file").recognize(frame, Rect.xywh(100, 50, 40, 20))
    assert got == [OcrResult("File", Rect.xywh(101, 52, 20, 10), 0.97)]


def test_external_empty_output(frame):
    assert child("empty").recognize(frame, Rect.xywh(0, 0, 10, 10)) == []


def test_external_receives_crop_as_pgm(frame):
    got = child("header").recognize(frame, Rect.xywh(10, 20, 33, 17))
    assert got[0].text == "33x17"
    assert got[0].bbox == Rect.xywh(10, 20, 33, 17)


def test_identical_crops_send_identical_bytes(frame):
    rect = Rect.xywh(5, 5, 30, 30)
    a = child("digest").recognize(frame, rect)
    b = child("digest").recognize(Frame(frame.luma.copy(), 0, 3), rect)
    assert a == b
    before = frame.luma.copy()
    child("digest").recognize(frame, rect)
    assert np.array_equal(frame.luma, before)


def test_external_nonzero_exit_carries_stderr(frame):
    with pytest.raises(BackendError, match="no model loaded") as info:
        child("fail").recognize(frame, Rect.xywh(0, 0, 10, 10))
    assert "status 1" in str(info.value)


@pytest.mark.parametrize("mode", ["malformed", "outside"])
def test_external_malformed_line(frame, mode):
    with pytest.raises(BackendError, match="malformed OCR output line 1"):
        child(mode).recognize(frame, Rect.xywh(0, 0, 10, 10))


def test_external_timeout(frame):
    with pytest.raises(BackendTimeout, match="timed out"):
        child("sleep", timeout=0.5).recognize(frame, Rect.xywh(0, 0, 10, 10))


def test_external_missing_command(frame):
    with pytest.raises(BackendError, match="cannot launch"):
        ExternalProcessOcr("/nonexistent/ocr-engine").recognize(frame, Rect.xywh(0, 0, 4, 4))


def test_from_env(monkeypatch):
    monkeypatch.setenv("OCR_CMD", "tesseract-wrapper --psm 6")
    assert ExternalProcessOcr.from_env().argv == ["tesseract-wrapper", "--psm", "6"]
    monkeypatch.delenv("OCR_CMD")
    with pytest.raises(ArgumentError):
        ExternalProcessOcr.from_env()


def test_crop(frame):
    c = crop(frame, Rect.xywh(3, 4, 5, 6))
    assert c.luma.shape == (6, 5)
    assert np.array_equal(c.luma, frame.luma[4:10, 3:8])
    assert decode_pgm(encode_pgm(c)).shape == (6, 5)
    with pytest.raises(ArgumentError):
        crop(frame, Rect.xywh(190, 0, 20, 5))


def test_mock_lookup(frame):
    rect = Rect.xywh(10, 10, 30, 10)
    hit = OcrResult("Save", Rect.xywh(12, 12, 10, 5), 0.9)
    mock = MockOcr({(3, rect): [hit]})
    assert mock.recognize(frame, rect) == [hit]
    assert mock.recognize(frame, Rect.xywh(0, 0, 5, 5)) == []
    assert mock.recognize(Frame(frame.luma, 0, 4), rect) == []


def test_mock_rejects_bbox_outside_rect():
    with pytest.raises(ValidationError):
        MockOcr({(0, Rect.xywh(0, 0, 10, 10)): [OcrResult("x", Rect.xywh(5, 5, 10, 10), 1.0)]})


def test_mock_from_entries():
    mock = MockOcr.from_entries([{"frame": 1, "rect": [0, 0, 20, 20],
                                  "results": [{"text": "A", "x": 1, "y": 1, "w": 3, "h": 3, "conf": 0.5}]}])
    f = Frame(np.zeros((20, 20), np.uint8), 0, 1)
    assert mock.recognize(f, Rect.xywh(0, 0, 20, 20))[0].bbox == Rect.xywh(1, 1, 3, 3)


def test_result_validation():
    with pytest.raises(ValidationError):
        OcrResult("", Rect.xywh(0, 0, 1, 1), 0.5)
    with pytest.raises(ValidationError):
        OcrResult("a", Rect.xywh(0, 0, 1, 1), 1.5)


def test_match_examples():
    vocab = ["Move Tool", "Lasso Tool", "Crop Tool"]
    assert match_menu_item("Lasso Tool", vocab) == ("Lasso Tool", 1.0)
    item, score = match_menu_item("Laso Tool", vocab)
    assert item == "Lasso Tool" and score == pytest.approx(0.9)
    assert match_menu_item("Foo", ["Move Tool"]) is None
    # "oo" aligns with "tool": distance 7 of 9
    assert similarity("Foo", "Move Tool") == pytest.approx(2 / 9)
    with pytest.raises(ArgumentError):
        match_menu_item("", vocab)
    with pytest.raises(ArgumentError):
        match_menu_item("   ", vocab)
    with pytest.raises(ArgumentError):
        match_menu_item("x", [])


def test_match_tie_keeps_vocabulary_order():
    # "cat" is one edit from both
    assert match_menu_item("cat", ["bat", "cap"], threshold=0.5)[0] == "bat"
    assert match_menu_item("cat", ["cap", "bat"], threshold=0.5)[0] == "cap"


def test_match_threshold_boundary():
    # 1 edit over 5 characters is exactly 0.8
    assert match_menu_item("abcde", ["abcdx"]) == ("abcdx", 0.8)
    assert match_menu_item("abcd", ["abcx"]) is None


def test_levenshtein():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("flaw", "lawn") == 2
    assert normalize_text("  Lasso \t  TOOL ") == "lasso tool"


words = st.text(alphabet="abcde ", min_size=1, max_size=12).filter(lambda s: s.strip())


@given(words, words)
def test_similarity_bounds(a, b):
    s = similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert (s == 1.0) == (normalize_text(a) == normalize_text(b))


@given(words, st.lists(words, min_size=1, max_size=5))
def test_match_case_and_space_invariant(text, vocab):
    mangled = "  " + "   ".join(text.upper().split()) + " "
    assert match_menu_item(text, vocab) == match_menu_item(mangled, vocab)
