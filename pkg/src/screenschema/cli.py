"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 OCR/generation backend error.
Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import canonical
from .config import load_config
from .cursor import CnnParams, augment, detect_cursor, mean_loss, synth_dataset, train_sgd
from .errors import BackendError, ScreenSchemaError
from .frameio import load_frame_directory, read_pgm
from .keyframe import diff_series, select_keyframes
from .memory import LongTermMemory, MemoryConfig, MemoryParams
from .metrics import EvalRecord, evaluate, failure_rate
from .mllm import HttpBackend, MockBackend, SessionError, session_run, transcript_bytes
from .ocr import ExternalProcessOcr, MockOcr
from .schema import SchemaConfig, compose_schema, serialize_canonical
from .taxonomy import ToolTaxonomy, default_taxonomy

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3


class InputError(Exception):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _ocr_for(args, cfg, clip_id: str):
    if getattr(args, "ocr_script", None):
        entries = _read_json(args.ocr_script)
        if not isinstance(entries, list):
            raise InputError(f"{args.ocr_script}: expected a list of entries")
        return MockOcr.from_entries(e for e in entries if e.get("clip", clip_id) == clip_id)
    if cfg.ocr_cmd:
        return ExternalProcessOcr(cfg.ocr_cmd, cfg.ocr_timeout)
    print("note: no OCR backend configured; text extraction skipped", file=sys.stderr)
    return MockOcr()


def _vocab(args) -> list[str]:
    vocab = []
    if getattr(args, "tool_vocab", False):
        vocab.extend(_taxonomy(args).tools)
    if getattr(args, "vocab", None):
        try:
            lines = Path(args.vocab).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise InputError(f"cannot read vocabulary: {exc}") from None
        vocab.extend(line.strip() for line in lines if line.strip())
    return vocab


def _taxonomy(args) -> ToolTaxonomy:
    if getattr(args, "taxonomy", None):
        return ToolTaxonomy.from_file(args.taxonomy)
    return default_taxonomy()


def _config(args, **overrides):
    return load_config(args.config, overrides)


def _schema_cfg(cfg) -> SchemaConfig:
    return SchemaConfig(k=cfg.k, delta=cfg.delta, min_area=cfg.min_area, merge_gap=cfg.merge_gap)


# -- subcommands -----------------------------------------------------------

def cmd_keyframes(args) -> int:
    cfg = _config(args, k=args.k, fps=args.fps)
    clip = load_frame_directory(args.dir, cfg.fps)
    series = diff_series(clip)
    selection = select_keyframes(clip, cfg.k)
    report = {
        "clip_id": clip.clip_id,
        "first_order": [float(v) for v in series.first_order],
        "second_order": [float(v) for v in series.second_order],
        "indices": list(selection.indices),
        "k": cfg.k,
    }
    sys.stdout.write(canonical.dumps(report) + "\n")
    return EXIT_OK


def cmd_schema(args) -> int:
    cfg = _config(args, k=args.k, delta=args.delta, min_area=args.min_area,
                  merge_gap=args.merge_gap, fps=args.fps, ocr_cmd=args.ocr_cmd)
    clip = load_frame_directory(args.dir, cfg.fps)
    cursor_params = CnnParams.load(args.cursor_params) if args.cursor_params else None
    schema = compose_schema(clip, cfg.k, _ocr_for(args, cfg, clip.clip_id), cursor_params,
                            _vocab(args), _schema_cfg(cfg))
    payload = serialize_canonical(schema)
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
    return EXIT_OK


def cmd_cursor_train(args) -> int:
    rng = np.random.default_rng(args.seed)
    data = synth_dataset(rng, args.synthetic)
    if args.augment:
        data = data + [augment(s, rng) for s in data]
    losses: list = []
    params = train_sgd(data, args.epochs, args.lr, args.seed, losses=losses)
    params.save(args.out)
    final = losses[-1] if losses else mean_loss(params, data)
    print(f"final_loss {final:.6f}")
    return EXIT_OK


def cmd_cursor_detect(args) -> int:
    params = CnnParams.load(args.params)
    pred = detect_cursor(params, read_pgm(args.frame))
    print(f"{pred.x} {pred.y} {pred.confidence:.6f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args, k=args.k, delta=args.delta, alpha=args.alpha, seed=args.seed,
                  q=args.q, d=args.d, fps=args.fps, ocr_cmd=args.ocr_cmd,
                  mllm_endpoint=args.endpoint, mllm_model=args.model)
    root = Path(args.root)
    if not root.is_dir():
        raise InputError(f"{root}: not a directory")
    clip_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not clip_dirs:
        raise InputError(f"{root}: no clip directories")
    clips = [load_frame_directory(p, cfg.fps) for p in clip_dirs]

    if args.backend == "mock":
        script = _read_json(args.script) if args.script else {}
        if not isinstance(script, dict):
            raise InputError(f"{args.script}: expected an object keyed by request digest")
        backend = MockBackend(script, strict=args.strict)
    else:
        if not cfg.mllm_endpoint:
            raise InputError("http backend needs --endpoint or MLLM_ENDPOINT")
        backend = HttpBackend(cfg.mllm_endpoint, cfg.mllm_model, cfg.mllm_timeout)

    mem_cfg = MemoryConfig(q_tokens=cfg.q, dim=cfg.d, alpha=cfg.alpha, seed=cfg.seed)
    params = MemoryParams.load(args.memory_params, cfg.q, cfg.d) if args.memory_params else None
    memory = LongTermMemory(mem_cfg, params)
    cursor_params = CnnParams.load(args.cursor_params) if args.cursor_params else None
    ocr = {clip.clip_id: _ocr_for(args, cfg, clip.clip_id) for clip in clips}

    transcript = session_run(clips, backend, memory, args.task, ocr, _schema_cfg(cfg),
                             cursor_params, _vocab(args), _taxonomy(args), cfg.decode())
    payload = transcript_bytes(transcript)
    if args.out:
        Path(args.out).write_bytes(payload)
    rate = failure_rate([step.parsed for step in transcript])
    print(f"failure_rate {canonical.format_fixed4(rate)}")
    return EXIT_OK


def _read_records(path) -> list[EvalRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            refs = obj["references"]
            if not isinstance(refs, list) or not refs or not all(isinstance(r, str) for r in refs):
                raise ValueError("references must be a non-empty list of strings")
            if not isinstance(obj["prediction"], str):
                raise ValueError("prediction must be a string")
            optional = {}
            for key in ("category_pred", "category_gold", "tool_pred", "tool_gold", "answer"):
                value = obj.get(key)
                if value is not None and not isinstance(value, str):
                    raise ValueError(f"{key} must be a string")
                optional[key] = value
            records.append(EvalRecord(str(obj.get("id", lineno)), obj["prediction"],
                                      tuple(refs), **optional))
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}: line {lineno}: malformed record ({exc})") from None
    if not records:
        raise InputError(f"{path}: no records")
    return records


def cmd_eval(args) -> int:
    report = evaluate(_read_records(args.records), _taxonomy(args))
    sys.stdout.write(canonical.dumps(report.to_dict()) + "\n")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="screenschema", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of flat config keys")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyframes", help="score frames and print the key-frame selection")
    p.add_argument("dir")
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--fps", type=float)
    p.set_defaults(func=cmd_keyframes)

    def schema_flags(p):
        p.add_argument("--k", type=_positive_int)
        p.add_argument("--delta", type=int)
        p.add_argument("--min-area", type=_positive_int)
        p.add_argument("--merge-gap", type=int)
        p.add_argument("--fps", type=float)
        p.add_argument("--ocr-script", help="JSON list of scripted OCR entries")
        p.add_argument("--ocr-cmd", help="external OCR command (overrides OCR_CMD)")
        p.add_argument("--vocab", help="menu vocabulary file, one item per line")
        p.add_argument("--tool-vocab", action="store_true", help="match against the tool taxonomy")
        p.add_argument("--taxonomy", help="taxonomy override file")
        p.add_argument("--cursor-params", help="trained cursor CNN params file")

    p = sub.add_parser("schema", help="compose the screen schema of one clip")
    p.add_argument("dir")
    p.add_argument("--out")
    schema_flags(p)
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("cursor", help="train or run the cursor CNN")
    csub = p.add_subparsers(dest="cursor_command", required=True)
    t = csub.add_parser("train")
    t.add_argument("--out", required=True)
    t.add_argument("--synthetic", type=_positive_int, default=200)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--augment", action="store_true", help="add one augmented copy per sample")
    t.set_defaults(func=cmd_cursor_train)
    d = csub.add_parser("detect")
    d.add_argument("--params", required=True)
    d.add_argument("frame", help="PGM frame")
    d.set_defaults(func=cmd_cursor_detect)

    p = sub.add_parser("run", help="run a session over ordered clip directories")
    p.add_argument("root")
    p.add_argument("--out")
    p.add_argument("--task", choices=("current_action", "next_action"), default="current_action")
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument("--script", help="mock backend script (JSON keyed by request digest)")
    p.add_argument("--strict", action="store_true", help="mock: fail on unscripted requests")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--q", type=_positive_int)
    p.add_argument("--d", type=_positive_int)
    p.add_argument("--memory-params")
    schema_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score line-delimited prediction records")
    p.add_argument("records")
    p.add_argument("--taxonomy")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SessionError as exc:
        code = EXIT_BACKEND if isinstance(exc.cause, BackendError) else EXIT_INPUT
        return _fail(code, str(exc))
    except BackendError as exc:
        return _fail(EXIT_BACKEND, str(exc))
    except (ScreenSchemaError, InputError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
