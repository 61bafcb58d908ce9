"""BLEU-4, ROUGE-1/2/L and throughput accounting.

Scores are percentages. Tokenization is NFC normalization, lowercasing and
whitespace splitting, so bracketed UI names like ``[Maneuver]`` stay whole.
"""

from __future__ import annotations

import csv
import json
import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence


def tokenize(text: str) -> list[str]:
    return unicodedata.normalize("NFC", text).lower().split()


def _tokens(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    """Sufficient statistics; corpus BLEU sums these before combining."""

    matches: list[int]
    totals: list[int]
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats([a + b for a, b in zip(self.matches, other.matches)],
                         [a + b for a, b in zip(self.totals, other.totals)],
                         self.hyp_len + other.hyp_len, self.ref_len + other.ref_len)


def bleu_stats(hyp, ref, max_n: int = 4) -> BleuStats:
    h, r = _tokens(hyp), _tokens(ref)
    matches, totals = [], []
    for n in range(1, max_n + 1):
        hc, rc = ngrams(h, n), ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return BleuStats(matches, totals, len(h), len(r))


def bleu_from_stats(st: BleuStats, smooth: bool = True) -> float:
    if st.hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(st.matches, st.totals):
        if m == 0:
            if not smooth:
                return 0.0
            m, t = m + 1, t + 1  # add-one on the zero-precision order only
        log_p += math.log(m / t)
    log_p /= len(st.matches)
    bp = 1.0 if st.hyp_len > st.ref_len else math.exp(1.0 - st.ref_len / st.hyp_len)
    return 100.0 * bp * math.exp(log_p)


def bleu4(hyp, ref, smooth: bool = True) -> float:
    return bleu_from_stats(bleu_stats(hyp, ref), smooth)


def corpus_bleu4(pairs: Iterable[tuple], smooth: bool = True) -> float:
    total = BleuStats([0] * 4, [0] * 4)
    for hyp, ref in pairs:
        total = total + bleu_stats(hyp, ref)
    return bleu_from_stats(total, smooth)


def _f1(overlap: int, n_hyp: int, n_ref: int) -> float:
    if overlap == 0 or n_hyp == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_hyp, overlap / n_ref
    return 100.0 * 2 * p * r / (p + r)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


@dataclass
class RougeScores:
    r1: float
    r2: float
    rL: float


def rouge(hyp, ref) -> RougeScores:
    h, r = _tokens(hyp), _tokens(ref)
    out = []
    for n in (1, 2):
        hc, rc = ngrams(h, n), ngrams(r, n)
        overlap = sum((hc & rc).values())
        out.append(_f1(overlap, sum(hc.values()), sum(rc.values())))
    out.append(_f1(lcs_length(h, r), len(h), len(r)))
    return RougeScores(*out)


@dataclass
class MetricReport:
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    n: int = 0

    def to_row(self) -> dict:
        """Column names as used in the exported metric tables."""
        return {"BLEU-4": round(self.bleu4, 4), "ROUGE-1": round(self.rouge1, 4),
                "ROUGE-2": round(self.rouge2, 4), "ROUGE-L": round(self.rougeL, 4)}


def evaluate(pairs: Sequence[tuple], smooth: bool = True) -> MetricReport:
    """Corpus BLEU-4 over pooled counts; ROUGE as the mean of per-pair F1."""
    pairs = list(pairs)
    if not pairs:
        return MetricReport(0.0, 0.0, 0.0, 0.0, 0)
    scores = [rouge(h, r) for h, r in pairs]
    n = len(scores)
    return MetricReport(
        corpus_bleu4(pairs, smooth),
        sum(s.r1 for s in scores) / n,
        sum(s.r2 for s in scores) / n,
        sum(s.rL for s in scores) / n,
        n,
    )


def read_predictions(path: str | Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append((str(rec["prediction"]), str(rec["reference"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def write_report_csv(report: MetricReport, path: str | Path, dataset: str = "") -> None:
    row = {"dataset": dataset, **report.to_row()}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


# -- efficiency ------------------------------------------------------------------

@dataclass
class RunStats:
    model_prep_time: float
    runtime: float
    n_samples: int
    n_steps: int

    def __post_init__(self):
        if self.runtime <= 0:
            raise ValueError(f"runtime must be positive, got {self.runtime}")
        if self.n_samples < 1:
            raise ValueError("need at least one sample")


@dataclass
class Throughput:
    sam_per_s: float
    steps_per_s: float

    def rounded(self, digits: int = 3) -> dict:
        return {k: round(v, digits) for k, v in asdict(self).items()}


def throughput(stats: RunStats) -> Throughput:
    return Throughput(stats.n_samples / stats.runtime, stats.n_steps / stats.runtime)
