import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from screenschema.errors import (ArgumentError, BackendError, BackendTimeout, ProtocolError,
                                 ScriptingError, TransportError)
from screenschema.memory import LongTermMemory, MemoryConfig
from screenschema.mllm import (PROMPT_TEMPLATES, GenRequest, HttpBackend, MockBackend, SessionError,
                               build_prompt, embedding_digest, parse_answer, session_run,
                               surrogate_embed, transcript_bytes)
from screenschema.ocr import MockOcr
from screenschema.taxonomy import ToolTaxonomy

from builders import (ANSWERS_20, N_MALFORMED, SESSION_ANSWERS, answer, check_golden, session_clips,
                      session_ocr, session_script)


# -- prompts -------------------------------------------------------------------

def test_templates_name_answer_keys():
    for task in ("current_action", "next_action"):
        for key in ('"description"', '"category"', '"tool"'):
            assert key in PROMPT_TEMPLATES[task]
    assert PROMPT_TEMPLATES["current_action"] != PROMPT_TEMPLATES["next_action"]


def test_build_prompt():
    a = build_prompt("current_action", "screen 8x8 span=0-0ms\n")
    assert a == build_prompt("current_action", "screen 8x8 span=0-0ms\n")
    assert a.endswith("Screen schema:\nscreen 8x8 span=0-0ms\n")
    with pytest.raises(ArgumentError):
        build_prompt("summarize", "")


def test_request_defaults_and_digest():
    req = GenRequest("p", "s")
    assert (req.temperature, req.top_p, req.max_tokens) == (0.0, 0.7, 256)
    assert req.digest() == GenRequest("p", "s").digest()
    assert req.digest() != GenRequest("p", "s", max_tokens=255).digest()
    with pytest.raises(ArgumentError):
        GenRequest("p", "s", max_tokens=0)
    with pytest.raises(ArgumentError):
        GenRequest("p", "s", temperature=-1)


# -- mock backend ------------------------------------------------------------------

def test_mock_backend():
    req = GenRequest("p", "s")
    mock = MockBackend({req.digest(): "hello"})
    assert mock.generate(req).answer == "hello"
    assert mock.generate(GenRequest("other", "s")).answer == "{}"
    assert len(mock.requests) == 2
    with pytest.raises(ScriptingError):
        MockBackend({}, strict=True).generate(req)
    resp = MockBackend({req.digest(): {"answer": "x", "embedding": [[1, 2]]}}).generate(req)
    assert resp.embedding.tolist() == [[1.0, 2.0]]


# -- http backend --------------------------------------------------------------------

class _Stub(BaseHTTPRequestHandler):
    mode = "echo"
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Stub.seen.append(body)
        if _Stub.mode == "echo":
            self._send(200, {"text": "fixed answer", "usage": {}})
        elif _Stub.mode == "500":
            self._send(500, {"error": "boom"})
        elif _Stub.mode == "notext":
            self._send(200, {"output": "no text here"})
        elif _Stub.mode == "garbage":
            self.send_response(200)
            self.end_headers()
            self.wfile.write(b"<html>")
        elif _Stub.mode == "slow":
            import time
            time.sleep(1.5)
            self._send(200, {"text": "late"})

    def _send(self, code, doc):
        payload = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def stub_url():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/generate"
    server.shutdown()


def test_http_echo(stub_url):
    _Stub.mode = "echo"
    _Stub.seen.clear()
    resp = HttpBackend(stub_url, model="m1").generate(GenRequest("prompt text", "schema", max_tokens=9))
    assert resp.answer == "fixed answer" and resp.embedding is None
    assert _Stub.seen[0] == {"model": "m1", "prompt": "prompt text", "temperature": 0.0,
                             "top_p": 0.7, "max_tokens": 9}


def test_http_500(stub_url):
    _Stub.mode = "500"
    with pytest.raises(TransportError) as info:
        HttpBackend(stub_url).generate(GenRequest("p", "s"))
    assert info.value.status == 500


@pytest.mark.parametrize("mode", ["notext", "garbage"])
def test_http_protocol_error(stub_url, mode):
    _Stub.mode = mode
    with pytest.raises(ProtocolError):
        HttpBackend(stub_url).generate(GenRequest("p", "s"))


def test_http_timeout(stub_url):
    _Stub.mode = "slow"
    with pytest.raises(BackendTimeout):
        HttpBackend(stub_url, timeout=0.3).generate(GenRequest("p", "s"))


def test_http_unreachable():
    with pytest.raises(TransportError):
        HttpBackend("http://127.0.0.1:9/none", timeout=2).generate(GenRequest("p", "s"))


def test_http_from_env(monkeypatch):
    monkeypatch.setenv("MLLM_ENDPOINT", "http://example.invalid/v1")
    assert HttpBackend.from_env().endpoint == "http://example.invalid/v1"
    monkeypatch.delenv("MLLM_ENDPOINT")
    with pytest.raises(ArgumentError):
        HttpBackend.from_env()


# -- embeddings and parsing -------------------------------------------------------

def test_surrogate_embed():
    a = surrogate_embed("open the file menu", 4, 8)
    assert a.shape == (4, 8)
    assert np.array_equal(a, surrogate_embed("open the file menu", 4, 8))
    assert np.all(np.abs(a) <= 1)
    assert surrogate_embed("", 2, 3).shape == (2, 3)
    for x, y in [("open the file menu", "open the file menU"), ("a", "b"), ("", " ")]:
        assert not np.array_equal(surrogate_embed(x, 4, 8), surrogate_embed(y, 4, 8))


def test_surrogate_embed_frozen_value():
    # sha256("") starts e3b0c44298fc1c14 -> little-endian seed 0x141cfc9842c4b0e3
    want = np.random.default_rng(0x141CFC9842C4B0E3).uniform(-1, 1, (1, 2))
    assert np.array_equal(surrogate_embed("", 1, 2), want)


@pytest.mark.parametrize("text, failure", [
    ('{"description":"opens the Move tool","category":"Move","tool":"Move Tool"}', False),
    ("I think the user opened a menu.", True),
    ('{"description":"x","category":"Move","tool":"Lasso Tool"}', True),
    ('[{"description":"x","category":"Move","tool":"Move Tool"}]', False),
    ('{"description":"x","category":"Move","tool":"Move Tool"', True),
    ('{"a": {"b": 1}}', True),
    (None, True),
])
def test_parse_answer(text, failure):
    assert parse_answer(text).is_failure is failure


def test_parse_answer_keeps_fields_for_audit():
    parsed = parse_answer('{"description":"d","category":"Move","tool":"Lasso Tool"}')
    assert parsed.is_failure
    assert (parsed.description, parsed.category, parsed.tool) == ("d", "Move", "Lasso Tool")
    ok = parse_answer('noise {"tool":"Move Tool","category":"Move","description":"a } b"} tail')
    assert not ok.is_failure and ok.description == "a } b"


def test_parse_answer_custom_taxonomy():
    tax = ToolTaxonomy.from_dict({"categories": [{"name": "Edit", "tools": ["Cut"]}]})
    assert not parse_answer(answer("d", "Edit", "Cut"), tax).is_failure
    assert parse_answer(answer("d", "Move", "Move Tool"), tax).is_failure


def test_twenty_answer_fixture():
    parsed = [parse_answer(a) for a in ANSWERS_20]
    assert sum(p.is_failure for p in parsed) == N_MALFORMED == 7


@pytest.mark.parametrize("junk", ["{", "}{", '{"a":"\\', "{{{{", '"{"', "\x00{}", "{" * 500])
def test_parse_answer_never_throws(junk):
    assert parse_answer(junk).is_failure


# -- session loop ------------------------------------------------------------------

def _run(clips=None, alpha=0.5, seed=42, script=None, strict=False, task="current_action"):
    clips = clips or session_clips()
    backend = MockBackend(script if script is not None else session_script(clips, task), strict)
    memory = LongTermMemory(MemoryConfig(alpha=alpha, seed=seed))
    return session_run(clips, backend, memory, task, session_ocr()), backend, memory


def test_session_golden_transcript():
    transcript, _, _ = _run()
    assert [s.answer for s in transcript] == SESSION_ANSWERS
    assert [s.parsed.is_failure for s in transcript] == [False, False, True]
    data = transcript_bytes(transcript)
    assert data.count(b"\n") == 3
    check_golden("session.transcript.jsonl", data)
    again, _, _ = _run()
    assert transcript_bytes(again) == data


def test_session_single_clip():
    clips = session_clips()[:1]
    transcript, backend, memory = _run(clips)
    assert len(transcript) == 1 and memory.state.t == 1 and len(backend.requests) == 1
    # first step passes the embedding straight through
    e = surrogate_embed(transcript[0].answer + backend.requests[0].schema_text, 4, 8)
    assert transcript[0].e_prime_digest == embedding_digest(e)


def test_session_passes_memory_to_backend():
    seen = []

    class Spy(MockBackend):
        def generate(self, request, memory_embedding=None):
            seen.append(memory_embedding)
            return super().generate(request, memory_embedding)

    clips = session_clips()
    session_run(clips, Spy(session_script(clips)), LongTermMemory(MemoryConfig()), "current_action",
                session_ocr())
    assert seen[0] is None
    assert all(e.shape == (4, 8) for e in seen[1:])


def test_alpha_one_answers_ignore_memory_seed():
    a, _, _ = _run(alpha=1.0, seed=1)
    b, _, _ = _run(alpha=1.0, seed=2)
    assert [s.answer for s in a] == [s.answer for s in b]
    assert transcript_bytes(a) == transcript_bytes(b)
    c, _, _ = _run(alpha=0.5, seed=1)
    d, _, _ = _run(alpha=0.5, seed=2)
    assert transcript_bytes(c) != transcript_bytes(d)


def test_session_errors_carry_step():
    clips = session_clips()
    script = session_script(clips)
    # drop the second clip's answer and run strict
    second = list(script)[1]
    del script[second]
    with pytest.raises(SessionError, match="^step 1:") as info:
        _run(clips, script=script, strict=True)
    assert isinstance(info.value.cause, BackendError)


def test_session_missing_ocr_backend():
    clips = session_clips()
    with pytest.raises(SessionError, match="step 0"):
        session_run(clips, MockBackend(), LongTermMemory(MemoryConfig()), "current_action", {})


def test_session_rejects_empty_and_bad_task():
    with pytest.raises(ArgumentError):
        session_run([], MockBackend(), LongTermMemory(MemoryConfig()), "current_action", MockOcr())
    with pytest.raises(ArgumentError):
        session_run(session_clips(), MockBackend(), LongTermMemory(MemoryConfig()), "guess", MockOcr())


def test_next_action_task_changes_prompts():
    a, _, _ = _run(task="current_action")
    b, _, _ = _run(task="next_action")
    assert a[0].prompt != b[0].prompt
    assert a[0].schema == b[0].schema
