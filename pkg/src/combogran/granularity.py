"""Combination-granularity expressions and the datasets they describe.

``*`` packs modalities of one scene into a single sample (fusion);
``+`` concatenates independently built sample sets (mixing).  ``*``
binds tighter than ``+``, so ``M*V+S`` is one fused M/V sample per scene
followed by one sample per static image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .modal import Corpus

MODALITIES = ("S", "M", "V")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


@dataclass(frozen=True)
class GranularityExpr:
    terms: tuple[tuple[str, ...], ...]

    def __str__(self) -> str:
        return "+".join("*".join(t) for t in self.terms)

    def canonical(self) -> tuple[tuple[str, ...], ...]:
        """Order-insensitive key: S*V*M and S*M*V name the same dataset."""
        order = {m: i for i, m in enumerate(MODALITIES)}
        return tuple(sorted(tuple(sorted(t, key=order.__getitem__)) for t in self.terms))

    @property
    def modalities(self) -> set[str]:
        return {m for t in self.terms for m in t}


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def parse_expr(text: str) -> GranularityExpr:
    """Parse ``expr := term ('+' term)*``, ``term := mod ('*' mod)*``."""
    tokens = [(i, ch) for i, ch in enumerate(text) if not ch.isspace()]
    if not tokens:
        raise ExprSyntaxError("empty expression", _byte_offset(text, len(text)))
    terms: list[tuple[str, ...]] = []
    current: list[str] = []
    expect_mod = True
    for i, ch in tokens:
        if expect_mod:
            if ch not in MODALITIES:
                raise ExprSyntaxError(f"expected S, M or V, found {ch!r}", _byte_offset(text, i))
            if ch in current:
                raise ExprSyntaxError(f"modality {ch} repeated within one fused term",
                                      _byte_offset(text, i))
            current.append(ch)
            expect_mod = False
        elif ch == "*":
            expect_mod = True
        elif ch == "+":
            terms.append(tuple(current))
            current = []
            expect_mod = True
        else:
            raise ExprSyntaxError(f"expected '*' or '+', found {ch!r}", _byte_offset(text, i))
    if expect_mod:
        raise ExprSyntaxError("expression ends with an operator", _byte_offset(text, len(text)))
    terms.append(tuple(current))
    return GranularityExpr(tuple(terms))


@dataclass(frozen=True)
class Part:
    kind: str  # "static" | "multi" | "video"
    refs: tuple[str, ...]


@dataclass(frozen=True)
class Sample:
    sample_id: str
    scene_id: str
    parts: tuple[Part, ...]
    target: str
    expr: str = ""

    def __post_init__(self):
        if not self.parts:
            raise ValueError(f"sample {self.sample_id} has no parts")

    def to_record(self) -> dict:
        return {
            "id": self.sample_id,
            "expr": self.expr,
            "scene": self.scene_id,
            "parts": [{"kind": p.kind, "refs": list(p.refs)} for p in self.parts],
            "target": self.target,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        parts = tuple(Part(p["kind"], tuple(p["refs"])) for p in rec["parts"])
        return cls(rec["id"], rec["scene"], parts, rec["target"], rec.get("expr", ""))

    @property
    def is_single_image(self) -> bool:
        return len(self.parts) == 1 and self.parts[0].kind == "static" and len(self.parts[0].refs) == 1


@dataclass
class Dataset:
    name: str
    expr: GranularityExpr | None
    samples: list[Sample]
    provenance: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


class MissingModalityError(ValueError):
    pass


def _term_text(term: Sequence[str]) -> str:
    return "*".join(term)


def fuse_term(term: Sequence[str], corpus: Corpus) -> list[Sample]:
    """Samples for one term: per static image for bare S, otherwise one per scene."""
    term = tuple(term)
    label = _term_text(term)
    statics = corpus.statics_by_scene()
    multis = corpus.multi_by_scene()
    out: list[Sample] = []

    if term == ("S",):
        for v in corpus.videos:
            images = statics.get(v.scene_id)
            if not images:
                raise MissingModalityError(f"scene {v.scene_id} has no S (static) samples")
            for s in images:
                i = s.source_ordinal[1]
                out.append(Sample(f"{label}:{v.scene_id}:{i}", v.scene_id,
                                  (Part("static", (s.frame.content,)),), s.label, label))
        return out

    for v in corpus.videos:
        parts: list[Part] = []
        for mod in term:
            if mod == "S":
                images = statics.get(v.scene_id)
                if not images:
                    raise MissingModalityError(f"scene {v.scene_id} has no S (static) samples")
                parts.extend(Part("static", (s.frame.content,)) for s in images)
            elif mod == "M":
                m = multis.get(v.scene_id)
                if m is None:
                    raise MissingModalityError(f"scene {v.scene_id} has no M (multi-image) sample")
                parts.append(Part("multi", tuple(f.content for f in m.frames)))
            elif mod == "V":
                parts.append(Part("video", tuple(f.content for f in v.frames)))
            else:
                raise ValueError(f"unknown modality {mod!r}")
        out.append(Sample(f"{label}:{v.scene_id}", v.scene_id, tuple(parts), v.label, label))
    return out


def build_dataset(expr: GranularityExpr | str, corpus: Corpus, name: str | None = None) -> Dataset:
    if isinstance(expr, str):
        expr = parse_expr(expr)
    samples: list[Sample] = []
    provenance: dict[str, int] = {}
    for term in expr.terms:
        part = fuse_term(term, corpus)
        key = _term_text(term)
        provenance[key] = provenance.get(key, 0) + len(part)
        samples.extend(part)
    return Dataset(name or str(expr), expr, samples, provenance)


def expected_size(expr: GranularityExpr | str, n_scenes: int, n_statics: int) -> int:
    """Cardinality law: bare S contributes N_S samples, any other term N_scenes."""
    if isinstance(expr, str):
        expr = parse_expr(expr)
    return sum(n_statics if t == ("S",) else n_scenes for t in expr.terms)


def sliding_windows(corpus: Corpus, w: int) -> Dataset:
    """Consecutive key-frame windows of width w, labelled by the last frame."""
    if w < 1:
        raise ValueError(f"window width must be >= 1, got {w}")
    statics = corpus.statics_by_scene()
    longest = max((len(x) for x in statics.values()), default=0)
    if w > longest:
        raise ValueError(f"window width {w} exceeds the longest scene ({longest} key frames)")
    name = f"window{w}"
    samples = []
    for v in corpus.videos:
        images = statics.get(v.scene_id, [])
        for i in range(len(images) - w + 1):
            window = images[i:i + w]
            parts = tuple(Part("static", (s.frame.content,)) for s in window)
            samples.append(Sample(f"{name}:{v.scene_id}:{i}", v.scene_id, parts,
                                  window[-1].label, name))
    return Dataset(name, None, samples, {name: len(samples)})


# -- serialization ----------------------------------------------------------------

def dumps_sample(sample: Sample, minimal: bool = False) -> str:
    if minimal:
        if not sample.is_single_image:
            raise ValueError(f"sample {sample.sample_id} is not a single-image sample")
        rec = {"image": sample.parts[0].refs[0], "instruction": sample.target}
    else:
        rec = sample.to_record()
    return json.dumps(rec, ensure_ascii=False)


def write_dataset(samples: Iterable[Sample], path: str | Path, minimal: bool = False) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(dumps_sample(s, minimal) + "\n")
            n += 1
    return n


def read_dataset(path: str | Path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [Sample.from_record(json.loads(line)) for line in fh if line.strip()]
