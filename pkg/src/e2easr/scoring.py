"""Error-rate scoring, decode-cost accounting and result tables."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple

CORRECT, SUB, INS, DEL = "C", "S", "I", "D"


@dataclass
class UtteranceScore:
    utt_id: str
    substitutions: int
    deletions: int
    insertions: int
    ref_tokens: int
    ops: List[Tuple[str, Optional[str], Optional[str]]] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_tokens


def edit_align(ref: Sequence[str], hyp: Sequence[str], utt_id: str = "") -> UtteranceScore:
    """Minimum-edit alignment with unit costs.

    Among alignments with the fewest edits, the one with the fewest
    insertions+deletions wins (substitution preferred); remaining ties are
    broken in backtrace order substitution, insertion, deletion. The S/D/I
    counts are therefore a function of (ref, hyp) alone.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise ValueError("reference must be non-empty")
    n, m = len(ref), len(hyp)
    # cost[i][j] = (edits, indels) for ref[:i] vs hyp[:j]
    cost = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = (i, i)
    for j in range(1, m + 1):
        cost[0][j] = (j, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, k = cost[i - 1][j - 1]
            diag = (e + (ref[i - 1] != hyp[j - 1]), k)
            e, k = cost[i][j - 1]
            ins = (e + 1, k + 1)
            e, k = cost[i - 1][j]
            dele = (e + 1, k + 1)
            cost[i][j] = min(diag, ins, dele)

    ops = []
    i, j = n, m
    while i or j:
        here = cost[i][j]
        if i and j:
            e, k = cost[i - 1][j - 1]
            same = ref[i - 1] == hyp[j - 1]
            if (e + (not same), k) == here:
                ops.append((CORRECT if same else SUB, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if j:
            e, k = cost[i][j - 1]
            if (e + 1, k + 1) == here:
                ops.append((INS, None, hyp[j - 1]))
                j -= 1
                continue
        ops.append((DEL, ref[i - 1], None))
        i -= 1
    ops.reverse()
    count = {op: 0 for op in (CORRECT, SUB, INS, DEL)}
    for op, _, _ in ops:
        count[op] += 1
    return UtteranceScore(utt_id, count[SUB], count[DEL], count[INS], n, ops)


@dataclass
class ScoreReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_tokens: int
    utterances: List[UtteranceScore] = field(default_factory=list)

    def __post_init__(self):
        if self.ref_tokens <= 0:
            raise ValueError("a score report needs at least one reference token")
        if min(self.substitutions, self.deletions, self.insertions) < 0:
            raise ValueError("error counts must be non-negative")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_tokens

    @classmethod
    def aggregate(cls, utterances: Iterable[UtteranceScore]) -> "ScoreReport":
        utts = list(utterances)
        return cls(sum(u.substitutions for u in utts), sum(u.deletions for u in utts),
                   sum(u.insertions for u in utts), sum(u.ref_tokens for u in utts), utts)


def tokenize(text: str, unit: str = "word", lowercase: bool = True) -> List[str]:
    """Words split on whitespace; characters keep single spaces between words as tokens."""
    if lowercase:
        text = text.lower()
    words = text.split()
    if unit == "word":
        return words
    if unit == "char":
        return list(" ".join(words))
    raise ValueError(f"unknown scoring unit {unit!r}")


def score_corpus(refs: Mapping[str, str], hyps: Mapping[str, str], unit: str = "word",
                 lowercase: bool = True) -> ScoreReport:
    """Aggregate error counts. A reference without a hypothesis scores as all deletions."""
    extra = sorted(set(hyps) - set(refs))
    if extra:
        raise ValueError(f"hypotheses without references: {', '.join(extra[:5])}")
    scores = []
    for utt in sorted(refs):
        ref = tokenize(refs[utt], unit, lowercase)
        if not ref:
            raise ValueError(f"{utt}: empty reference")
        hyp = tokenize(hyps.get(utt, ""), unit, lowercase)
        scores.append(edit_align(ref, hyp, utt))
    return ScoreReport.aggregate(scores)


@dataclass
class DecodeCost:
    joiner_calls: int = 0
    wall_time: float = 0.0
    utterances: int = 0

    def __post_init__(self):
        if self.joiner_calls < 0 or self.wall_time < 0 or self.utterances < 0:
            raise ValueError("decode cost counters must be non-negative")

    def __add__(self, other: "DecodeCost") -> "DecodeCost":
        return DecodeCost(self.joiner_calls + other.joiner_calls, self.wall_time + other.wall_time,
                          self.utterances + other.utterances)


def measure_decode(decode: Callable, dataset: Iterable) -> Tuple[list, DecodeCost]:
    """Run ``decode`` over ``dataset``; it must return something with a ``joiner_calls`` count."""
    results, cost = [], DecodeCost()
    for item in dataset:
        start = time.perf_counter()
        out = decode(item)
        elapsed = time.perf_counter() - start
        results.append(out)
        cost = cost + DecodeCost(int(out.joiner_calls), elapsed, 1)
    return results, cost


# ---------------------------------------------------------------------------
# reports


def format_alignment(score: UtteranceScore) -> str:
    """Three aligned rows (REF, HYP, ops) with ``*`` for gaps."""
    ref_row, hyp_row, op_row = [], [], []
    for op, r, h in score.ops:
        r, h = r if r is not None else "*", h if h is not None else "*"
        r, h = ("_" if r == " " else r), ("_" if h == " " else h)
        w = max(len(r), len(h), 1)
        ref_row.append(r.ljust(w))
        hyp_row.append(h.ljust(w))
        op_row.append((" " if op == CORRECT else op).ljust(w))
    return (f"id: {score.utt_id}\n"
            f"REF: {' '.join(ref_row)}\nHYP: {' '.join(hyp_row)}\nOP:  {' '.join(op_row)}\n"
            f"S={score.substitutions} D={score.deletions} I={score.insertions} N={score.ref_tokens}\n")


def alignment_report(report: ScoreReport) -> str:
    return "\n".join(format_alignment(u) for u in report.utterances)


_COLUMNS = ("system", "err%", "sub", "del", "ins", "N")


def _rows(results: Mapping[str, ScoreReport]):
    for name, r in results.items():
        yield (name, f"{100.0 * r.wer:.1f}", r.substitutions, r.deletions, r.insertions, r.ref_tokens)


def summary_table(results: Mapping[str, ScoreReport]) -> str:
    rows = [tuple(map(str, _COLUMNS))] + [tuple(map(str, r)) for r in _rows(results)]
    widths = [max(len(r[i]) for r in rows) for i in range(len(_COLUMNS))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"


def summary_csv(results: Mapping[str, ScoreReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    w.writerows(_rows(results))
    return buf.getvalue()
