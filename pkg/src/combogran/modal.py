"""Modal hierarchy (video -> multi-image -> static) and corpus consistency checks.

A scene is recorded once as a video; its key transition frames form the
multi-image sample, and each key frame is unpacked into one static image.
Media are opaque references: two frames are "the same image" when their
``content`` strings are equal.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MIN_FRAMES = 5
MIN_KEYS, MAX_KEYS = 3, 6

HARD_OVERLAP = 0.5
SOFT_OVERLAP = 0.3


class UsageError(ValueError):
    """Inputs that cannot be meaningfully compared (e.g. mismatched scenes)."""


@dataclass(frozen=True)
class FrameRef:
    scene_id: str
    frame_index: int
    timestamp: float
    content: str
    feature: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"negative frame_index {self.frame_index} in scene {self.scene_id}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp} in scene {self.scene_id}")
        if self.feature is not None and not all(math.isfinite(x) for x in self.feature):
            raise ValueError(f"non-finite feature on frame {self.frame_index} of {self.scene_id}")


@dataclass(frozen=True)
class VideoSample:
    scene_id: str
    frames: tuple[FrameRef, ...]
    key_indices: tuple[int, ...]
    features: frozenset[str]
    labels: tuple[str, ...]
    feature: tuple[float, ...] | None = None

    def __post_init__(self):
        sid = self.scene_id
        if len(self.frames) < MIN_FRAMES:
            raise ValueError(f"scene {sid}: {len(self.frames)} frames, need >= {MIN_FRAMES}")
        if not MIN_KEYS <= len(self.key_indices) <= MAX_KEYS:
            raise ValueError(f"scene {sid}: {len(self.key_indices)} key frames, need {MIN_KEYS}..{MAX_KEYS}")
        if len(self.labels) != len(self.key_indices):
            raise ValueError(f"scene {sid}: {len(self.labels)} labels for {len(self.key_indices)} key frames")
        indices = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in itertools.pairwise(indices)):
            raise ValueError(f"scene {sid}: frame indices not strictly increasing")
        stamps = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in itertools.pairwise(stamps)):
            raise ValueError(f"scene {sid}: timestamps not strictly increasing")
        if any(f.scene_id != sid for f in self.frames):
            raise ValueError(f"scene {sid}: frame from another scene")
        if any(b <= a for a, b in itertools.pairwise(self.key_indices)):
            raise ValueError(f"scene {sid}: key indices not strictly increasing")
        known = set(indices)
        missing = [k for k in self.key_indices if k not in known]
        if missing:
            raise ValueError(f"scene {sid}: key indices {missing} not among frame indices")

    @property
    def key_frames(self) -> tuple[FrameRef, ...]:
        by_index = {f.frame_index: f for f in self.frames}
        return tuple(by_index[k] for k in self.key_indices)

    @property
    def n_keys(self) -> int:
        return len(self.key_indices)

    @property
    def label(self) -> str:
        return "\n".join(self.labels)


@dataclass(frozen=True)
class MultiImageSample:
    scene_id: str
    frames: tuple[FrameRef, ...]
    labels: tuple[str, ...]
    feature: tuple[float, ...] | None = None

    @property
    def label(self) -> str:
        return "\n".join(self.labels)


@dataclass(frozen=True)
class StaticImage:
    scene_id: str
    frame: FrameRef
    source_ordinal: tuple[int, int]  # (scene position k, frame position i), both 0-based
    label: str
    global_index: int = 0


@dataclass(frozen=True)
class Violation:
    constraint: str
    scene_ids: tuple[str, ...]
    message: str


@dataclass
class ConstraintReport:
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, constraint: str, scene_ids: Iterable[str], message: str) -> None:
        self.violations.append(Violation(constraint, tuple(scene_ids), message))

    def extend(self, other: "ConstraintReport") -> "ConstraintReport":
        self.violations.extend(other.violations)
        self.notes.extend(other.notes)
        return self

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": [
                {"constraint": v.constraint, "scene_ids": list(v.scene_ids), "message": v.message}
                for v in self.violations
            ],
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class Corpus:
    """All three modalities of a set of scenes, in scene order."""

    videos: tuple[VideoSample, ...]
    multis: tuple[MultiImageSample, ...]
    statics: tuple[StaticImage, ...]

    @property
    def scene_ids(self) -> list[str]:
        return [v.scene_id for v in self.videos]

    def statics_by_scene(self) -> dict[str, list[StaticImage]]:
        out: dict[str, list[StaticImage]] = defaultdict(list)
        for s in self.statics:
            out[s.scene_id].append(s)
        return out

    def multi_by_scene(self) -> dict[str, MultiImageSample]:
        return {m.scene_id: m for m in self.multis}

    def video_by_scene(self) -> dict[str, VideoSample]:
        return {v.scene_id: v for v in self.videos}


# -- overlap -----------------------------------------------------------------

def scene_overlap(a: Iterable[str], b: Iterable[str]) -> float:
    """Intersection size over the smaller set's size."""
    a, b = frozenset(a), frozenset(b)
    if not a or not b:
        raise ValueError("scene_overlap needs two non-empty feature sets")
    return len(a & b) / min(len(a), len(b))


def overlapping_pairs(videos: Sequence[VideoSample]) -> list[tuple[tuple[str, str], float]]:
    """Every scene pair with omega > 0, found via an inverted token index."""
    index: dict[str, list[int]] = defaultdict(list)
    for pos, v in enumerate(videos):
        for tok in v.features:
            index[tok].append(pos)
    candidates: set[tuple[int, int]] = set()
    for members in index.values():
        candidates.update(itertools.combinations(members, 2))
    out = []
    for i, j in sorted(candidates):
        a, b = videos[i], videos[j]
        out.append(((a.scene_id, b.scene_id), scene_overlap(a.features, b.features)))
    return out


@dataclass
class WeightPlan:
    weights: dict[str, float]
    excluded: set[str]
    violations: list[tuple[tuple[str, str], float]]


def overlap_weight_plan(
    pairs: Iterable[tuple[tuple[str, str], float]],
    key_counts: Mapping[str, int],
) -> WeightPlan:
    """Per-scene covariance weights from pairwise overlaps.

    omega > 0.5 is a hard violation; 0.3 < omega <= 0.5 keeps only the scene
    with more key frames (ties drop the later scene id); 0 < omega <= 0.3
    keeps both at weight 1 - omega. A scene in several low-overlap pairs
    takes its smallest weight.
    """
    weights = {sid: 1.0 for sid in key_counts}
    excluded: set[str] = set()
    violations = []
    for (a, b), omega in pairs:
        if not 0.0 <= omega <= 1.0:
            raise ValueError(f"overlap {omega} for ({a}, {b}) outside [0, 1]")
        if omega > HARD_OVERLAP:
            violations.append(((a, b), omega))
        elif omega > SOFT_OVERLAP:
            ka, kb = key_counts[a], key_counts[b]
            if ka > kb or (ka == kb and a < b):
                excluded.add(b)
            else:
                excluded.add(a)
        elif omega > 0.0:
            w = 1.0 - omega
            weights[a] = min(weights.get(a, 1.0), w)
            weights[b] = min(weights.get(b, 1.0), w)
    for sid in excluded:
        weights[sid] = 0.0
    return WeightPlan(weights, excluded, violations)


# -- derivation ----------------------------------------------------------------

def decompose(videos: Sequence[VideoSample]) -> Corpus:
    """Derive multi-image and static samples from videos.

    m_k copies the key frames of v_k in order; static j = t_k + i holds
    key frame i of scene k, where t_k is the running key-frame total.
    When every key frame carries a feature vector, m_k's feature is their mean.
    """
    multis = []
    statics = []
    offsets = [0, *itertools.accumulate(v.n_keys for v in videos)]
    for k, v in enumerate(videos):
        keys = v.key_frames
        feature = None
        if all(f.feature is not None for f in keys):
            feature = tuple(np.mean([f.feature for f in keys], axis=0).tolist())
        multis.append(MultiImageSample(v.scene_id, keys, v.labels, feature))
        for i, (frame, label) in enumerate(zip(keys, v.labels)):
            statics.append(StaticImage(v.scene_id, frame, (k, i), label, offsets[k] + i))
    return Corpus(tuple(videos), tuple(multis), tuple(statics))


def static_offsets(videos: Sequence[VideoSample]) -> list[int]:
    """t_k for every scene: t_1 = 0, t_{k+1} = t_k + K_k."""
    return [0, *itertools.accumulate(v.n_keys for v in videos)][:-1]


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"feature dimension mismatch {x.shape} vs {y.shape}")
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float(x @ x) * float(y @ y))
    if denom == 0.0:
        return 0.0
    return float(x @ y) / denom


def validate_derivation(
    v: VideoSample,
    m: MultiImageSample,
    s: Sequence[StaticImage],
    corr_threshold: float = 0.8,
) -> ConstraintReport:
    """Check that m and s were derived from v without loss or reordering.

    Both m and s are compared against v's key frames, so a broken link is
    reported once, at the modality that broke it.
    """
    sid = v.scene_id
    if m.scene_id != sid or any(x.scene_id != sid for x in s):
        raise UsageError(f"derivation check mixes scenes: {sid}, {m.scene_id}, "
                         f"{sorted({x.scene_id for x in s})}")
    report = ConstraintReport()
    keys = [f.content for f in v.key_frames]

    multi = [f.content for f in m.frames]
    if len(multi) != len(keys):
        report.add("derivation", [sid], f"frame number matching: multi-image has {len(multi)} frames, "
                                  f"video has {len(keys)} key frames")
    elif multi != keys:
        kind = "frame order" if sorted(multi) == sorted(keys) else "frame content"
        report.add("derivation", [sid], f"{kind}: multi-image frames differ from video key frames")

    if len(s) != len(keys):
        report.add("derivation", [sid], f"frame number matching: {len(s)} static images for "
                                  f"{len(keys)} key frames")
    else:
        unpacked = [x.frame.content for x in s]
        ordinals = [x.source_ordinal[1] for x in s]
        if unpacked != keys or ordinals != list(range(len(keys))):
            kind = "frame order" if sorted(unpacked) == sorted(keys) else "frame content"
            report.add("derivation", [sid], f"{kind}: static images differ from multi-image frames")

    if m.feature is None or any(x.frame.feature is None for x in s):
        report.notes.append(f"{sid}: feature correlation not evaluated")
    else:
        for x in s:
            r = pearson(x.frame.feature, m.feature)
            if not r > corr_threshold:
                report.add("derivation", [sid], f"feature correlation {r:.3f} <= {corr_threshold} "
                                          f"for static {x.source_ordinal[1]}")
    return report


def validate_labels(corpus: Corpus, pairs=None) -> ConstraintReport:
    """Same-scene labels must agree across modalities; overlapping scenes must share labels."""
    report = ConstraintReport()
    multis = corpus.multi_by_scene()
    statics = corpus.statics_by_scene()
    for v in corpus.videos:
        sid = v.scene_id
        m = multis.get(sid)
        if m is not None and tuple(m.labels) != tuple(v.labels):
            report.add("labels", [sid], "multi-image label differs from video label")
        for x in statics.get(sid, []):
            i = x.source_ordinal[1]
            if i >= len(v.labels) or x.label != v.labels[i]:
                report.add("labels", [sid], f"static {i} label {x.label!r} differs from video label")
    if pairs is None:
        pairs = overlapping_pairs(corpus.videos)
    videos = corpus.video_by_scene()
    for (a, b), omega in pairs:
        if omega > 0 and videos[a].label != videos[b].label:
            report.add("labels", [a, b], f"overlapping scenes (omega={omega:.3f}) carry different labels")
    return report


def validate_independence(videos: Sequence[VideoSample], pairs=None) -> ConstraintReport:
    report = ConstraintReport()
    if pairs is None:
        pairs = overlapping_pairs(videos)
    for (a, b), omega in pairs:
        if omega > HARD_OVERLAP:
            report.add("independence", [a, b], f"scene overlap {omega:.3f} exceeds {HARD_OVERLAP}")
    return report


def validate_corpus(corpus: Corpus, corr_threshold: float = 0.8) -> ConstraintReport:
    """Run scene independence, label consistency and derivation checks together."""
    pairs = overlapping_pairs(corpus.videos)
    report = validate_independence(corpus.videos, pairs)
    report.extend(validate_labels(corpus, pairs))
    multis = corpus.multi_by_scene()
    statics = corpus.statics_by_scene()
    for v in corpus.videos:
        m = multis.get(v.scene_id)
        if m is None:
            report.add("derivation", [v.scene_id], "frame number matching: no multi-image sample")
            continue
        report.extend(validate_derivation(v, m, statics.get(v.scene_id, []), corr_threshold))
    notes = [n for n in report.notes if n.endswith("not evaluated")]
    if notes and len(notes) == len(corpus.videos):
        report.notes = [n for n in report.notes if not n.endswith("not evaluated")]
        report.notes.append("feature correlation not evaluated (no feature vectors)")
    return report


def corpus_shape_errors(
    videos: Sequence[VideoSample],
    n_scenes: int | None = None,
    n_statics: int | None = None,
) -> list[str]:
    errors = []
    if n_scenes is not None and len(videos) != n_scenes:
        errors.append(f"expected {n_scenes} scenes, found {len(videos)}")
    total = sum(v.n_keys for v in videos)
    if n_statics is not None and total != n_statics:
        errors.append(f"expected {n_statics} static images (sum of key frames), found {total}")
    return errors


# -- manifest io ---------------------------------------------------------------

def video_to_record(v: VideoSample) -> dict:
    rec = {
        "scene_id": v.scene_id,
        "frames": [{"index": f.frame_index, "timestamp": f.timestamp, "content": f.content}
                   for f in v.frames],
        "key_indices": list(v.key_indices),
        "features": sorted(v.features),
        "labels": list(v.labels),
    }
    if any(f.feature is not None for f in v.frames):
        for out, f in zip(rec["frames"], v.frames):
            if f.feature is not None:
                out["feature"] = list(f.feature)
    if v.feature is not None:
        rec["feature"] = list(v.feature)
    return rec


def video_from_record(rec: Mapping) -> VideoSample:
    sid = str(rec["scene_id"])
    frames = tuple(
        FrameRef(sid, int(f["index"]), float(f["timestamp"]), str(f["content"]),
                 tuple(f["feature"]) if f.get("feature") is not None else None)
        for f in rec["frames"]
    )
    feat = rec.get("feature")
    return VideoSample(
        sid,
        frames,
        tuple(int(k) for k in rec["key_indices"]),
        frozenset(rec.get("features", ())),
        tuple(rec.get("labels", ())),
        tuple(feat) if feat is not None else None,
    )


def load_manifest(path: str | Path) -> list[VideoSample]:
    videos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                videos.append(video_from_record(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return videos


def save_manifest(videos: Iterable[VideoSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in videos:
            fh.write(json.dumps(video_to_record(v), ensure_ascii=False) + "\n")
