"""Captioning and classification metrics, implemented from their definitions.

Every text metric accepts either raw strings (tokenized with :func:`tokenize`)
or pre-tokenized sequences.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ArgumentError
from .mllm import parse_answer

CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


def _tokens(text_or_tokens) -> list[str]:
    if isinstance(text_or_tokens, str):
        return tokenize(text_or_tokens)
    return list(text_or_tokens)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ------------------------------------------------------------------

def bleu(candidate, references, n: int = 2, smoothing: float | None = None) -> float:
    """Sentence BLEU-n with clipped precisions and brevity penalty.

    With ``smoothing`` set, zero match counts are replaced by that epsilon.
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    refs = [_tokens(r) for r in references]
    if not refs:
        raise ArgumentError("at least one reference is required")
    cand = _tokens(candidate)
    if not cand:
        return 0.0

    log_sum = 0.0
    for m in range(1, n + 1):
        cand_grams = ngrams(cand, m)
        total = sum(cand_grams.values())
        max_ref = Counter()
        for ref in refs:
            max_ref |= ngrams(ref, m)
        clipped = sum(min(c, max_ref[g]) for g, c in cand_grams.items())
        if clipped == 0:
            if smoothing is None or total == 0:
                return 0.0
            clipped = smoothing
        log_sum += math.log(clipped / total)

    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    penalty = 1.0 if c >= r else math.exp(1.0 - r / c)
    return penalty * math.exp(log_sum / n)


# -- ROUGE-L ---------------------------------------------------------------

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    cand, ref = _tokens(candidate), _tokens(reference)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


# -- METEOR (exact matching only) ------------------------------------------

def meteor_alignment(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """One-to-one exact alignment built greedily from the longest common runs.

    Repeatedly aligns the longest run of consecutive tokens shared by the
    unaligned parts of both sides (earliest candidate position, then earliest
    reference position, on ties). This keeps the maximum number of matches
    while keeping chunks long.
    """
    free_c = [True] * len(cand)
    free_r = [True] * len(ref)
    pairs = []
    while True:
        best = (0, 0, 0)  # length, cand start, ref start
        for i in range(len(cand)):
            if not free_c[i]:
                continue
            for j in range(len(ref)):
                length = 0
                while (i + length < len(cand) and j + length < len(ref)
                       and free_c[i + length] and free_r[j + length]
                       and cand[i + length] == ref[j + length]):
                    length += 1
                if length > best[0]:
                    best = (length, i, j)
        length, i, j = best
        if length == 0:
            return sorted(pairs)
        for off in range(length):
            free_c[i + off] = free_r[j + off] = False
            pairs.append((i + off, j + off))


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor(candidate, reference, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    """METEOR with exact token matching.

    ``F = PR / (alpha P + (1 - alpha) R)`` (recall weighted 9:1 by default) and
    fragmentation penalty ``gamma * (chunks / matches) ** beta``.
    """
    cand, ref = _tokens(candidate), _tokens(reference)
    pairs = meteor_alignment(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(pairs) / m) ** beta
    return f_mean * (1 - penalty)


# -- CIDEr-D ---------------------------------------------------------------

def _cider_vector(grams: Counter, df: Counter, log_n: float) -> dict:
    return {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in grams.items()}


def _norm(vec: Mapping) -> float:
    return math.sqrt(sum(v * v for v in vec.values()))


def cider_d_scores(candidates: Sequence, references: Sequence[Sequence],
                   sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-candidate CIDEr-D scores over one corpus.

    Document frequency counts the reference sets that contain an n-gram;
    candidate counts are clipped by reference counts in the numerator only.
    """
    if len(candidates) != len(references):
        raise ArgumentError(
            f"{len(candidates)} candidates but {len(references)} reference sets"
        )
    cands = [_tokens(c) for c in candidates]
    refsets = [[_tokens(r) for r in refs] for refs in references]
    if any(not refs for refs in refsets):
        raise ArgumentError("every candidate needs at least one reference")

    log_n = math.log(len(refsets)) if refsets else 0.0
    df = [Counter() for _ in range(CIDER_MAX_N)]
    for refs in refsets:
        for n in range(CIDER_MAX_N):
            seen = set()
            for ref in refs:
                seen.update(ngrams(ref, n + 1))
            df[n].update(seen)

    scores = []
    for cand, refs in zip(cands, refsets):
        cand_vecs = [_cider_vector(ngrams(cand, n + 1), df[n], log_n) for n in range(CIDER_MAX_N)]
        total = 0.0
        for ref in refs:
            per_n = []
            for n in range(CIDER_MAX_N):
                ref_vec = _cider_vector(ngrams(ref, n + 1), df[n], log_n)
                denom = _norm(cand_vecs[n]) * _norm(ref_vec)
                if denom == 0.0:
                    per_n.append(0.0)
                    continue
                dot = sum(min(v, ref_vec[g]) * ref_vec[g]
                          for g, v in cand_vecs[n].items() if g in ref_vec)
                per_n.append(dot / denom)
            gauss = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma ** 2))
            total += 10.0 * gauss * sum(per_n) / CIDER_MAX_N
        scores.append(total / len(refs))
    return scores


def cider_d(candidates: Sequence, references: Sequence[Sequence], sigma: float = CIDER_SIGMA) -> float:
    scores = cider_d_scores(candidates, references, sigma)
    return sum(scores) / len(scores) if scores else 0.0


# -- classification --------------------------------------------------------

def accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    if len(preds) != len(golds):
        raise ArgumentError(f"{len(preds)} predictions but {len(golds)} gold labels")
    if not preds:
        raise ArgumentError("accuracy of an empty corpus is undefined")
    hits = sum(p.casefold() == g.casefold() for p, g in zip(preds, golds))
    return hits / len(preds)


def failure_rate(parsed: Sequence) -> float:
    if not parsed:
        raise ArgumentError("failure rate of an empty corpus is undefined")
    return sum(bool(p.is_failure) for p in parsed) / len(parsed)


# -- corpus report ---------------------------------------------------------

@dataclass
class MetricReport:
    scores: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "scores": dict(self.scores)}


@dataclass(frozen=True)
class EvalRecord:
    id: str
    prediction: str
    references: tuple[str, ...]
    category_pred: str | None = None
    category_gold: str | None = None
    tool_pred: str | None = None
    tool_gold: str | None = None
    answer: str | None = None


def evaluate(records: Iterable[EvalRecord], taxonomy=None) -> MetricReport:
    """Corpus report: text metrics are means of per-record scores.

    BLEU, ROUGE-L and METEOR take each record's best reference; CIDEr-D uses
    all references. Accuracies cover records that carry both labels; the
    failure rate covers records that carry a raw ``answer``.
    """
    records = list(records)
    if not records:
        raise ArgumentError("no records to evaluate")
    report = MetricReport(counts={"records": len(records)})
    preds = [r.prediction for r in records]
    refs = [list(r.references) for r in records]

    def mean(values):
        return sum(values) / len(values)

    report.scores["bleu_1"] = mean([bleu(p, rs, 1) for p, rs in zip(preds, refs)])
    report.scores["bleu_2"] = mean([bleu(p, rs, 2) for p, rs in zip(preds, refs)])
    report.scores["rouge_l"] = mean([max(rouge_l(p, r) for r in rs) for p, rs in zip(preds, refs)])
    report.scores["meteor"] = mean([max(meteor(p, r) for r in rs) for p, rs in zip(preds, refs)])
    report.scores["cider_d"] = cider_d(preds, refs)

    for name in ("category", "tool"):
        labelled = [r for r in records
                    if getattr(r, f"{name}_pred") is not None and getattr(r, f"{name}_gold") is not None]
        if labelled:
            report.scores[f"{name}_accuracy"] = accuracy(
                [getattr(r, f"{name}_pred") for r in labelled],
                [getattr(r, f"{name}_gold") for r in labelled],
            )
            report.counts[f"{name}_labelled"] = len(labelled)

    answered = [r.answer for r in records if r.answer is not None]
    if answered:
        report.scores["failure_rate"] = failure_rate([parse_answer(a, taxonomy) for a in answered])
        report.counts["answers"] = len(answered)
    return report
