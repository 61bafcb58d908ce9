"""Seeded synthetic corpora shaped like the recorded game-operation data.

Nothing here is a measurement; these generators exist so the dataset
algebra, constraint checks and MI estimators can be exercised at the
real corpus size (180 scenes, 1002 key frames) without the media.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .modal import MAX_KEYS, MIN_KEYS, FrameRef, VideoSample

REFERENCE_SCENES = 180
REFERENCE_STATICS = 1002

ACTIONS = (
    "Click the red [Ground Unit] icon",
    "Click the blue [Air Unit] icon",
    "Click [Maneuver]",
    "Click [Fire]",
    "Click [Confirm]",
    "Click [End Turn]",
    "Press the hotkey F1",
    "Press the hotkey F2",
    "Double-click the map tile",
    "Click [Supply]",
)


def key_counts(rng: np.random.Generator, n_scenes: int, total: int) -> list[int]:
    """Random K_k in [3, 6] with the prescribed sum."""
    lo, hi = n_scenes * MIN_KEYS, n_scenes * MAX_KEYS
    if not lo <= total <= hi:
        raise ValueError(f"{total} key frames cannot be split over {n_scenes} scenes of {MIN_KEYS}..{MAX_KEYS}")
    counts = [MIN_KEYS] * n_scenes
    for _ in range(total - lo):
        open_ = [i for i, k in enumerate(counts) if k < MAX_KEYS]
        counts[open_[int(rng.integers(len(open_)))]] += 1
    return counts


def _twin_pairs(counts: list[int], n_twins: int) -> list[tuple[int, int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for i, k in enumerate(counts):
        groups[k].append(i)
    pairs = []
    for k in sorted(groups):
        members = groups[k]
        while len(members) >= 2 and len(pairs) < n_twins:
            pairs.append((members.pop(0), members.pop(0)))
    return pairs


def reference_videos(
    seed: int = 0,
    n_scenes: int = REFERENCE_SCENES,
    n_statics: int = REFERENCE_STATICS,
    n_twins: int = 4,
    with_features: bool = False,
    d: int = 16,
) -> list[VideoSample]:
    """Scenes with K in 3..6 summing to n_statics.

    ``n_twins`` pairs of scenes with equal K share labels and one of five
    feature tokens (omega = 0.2), so the corpus exercises the soft-overlap
    path while still passing every constraint.
    """
    rng = np.random.default_rng(seed)
    counts = key_counts(rng, n_scenes, n_statics)
    twins = _twin_pairs(counts, n_twins)
    twin_of = {}
    for t, (a, b) in enumerate(twins):
        twin_of[a] = (t, None)
        twin_of[b] = (t, a)

    videos: list[VideoSample] = []
    labels_by_pos: dict[int, tuple[str, ...]] = {}
    for k, n_keys in enumerate(counts):
        sid = f"scene_{k:03d}"
        n_frames = n_keys + int(rng.integers(2, 8))
        keys = tuple(sorted(rng.choice(n_frames, size=n_keys, replace=False).tolist()))
        base = rng.standard_normal(d) if with_features else None
        frames = []
        for i in range(n_frames):
            feat = None
            if base is not None:
                feat = tuple((base + 0.05 * rng.standard_normal(d)).tolist())
            frames.append(FrameRef(sid, i, round(0.5 * i, 3), f"{sid}/frame_{i:03d}.png", feat))

        tokens = {f"{sid}/tok{j}" for j in range(5)}
        labels = None
        if k in twin_of:
            t, partner = twin_of[k]
            tokens = {f"{sid}/tok{j}" for j in range(4)} | {f"twin{t}/shared"}
            if partner is not None:
                labels = labels_by_pos[partner]
        if labels is None:
            labels = tuple(ACTIONS[int(j)] for j in rng.integers(len(ACTIONS), size=n_keys))
        labels_by_pos[k] = labels
        videos.append(VideoSample(sid, tuple(frames), keys, frozenset(tokens), labels,
                                  tuple(base.tolist()) if base is not None else None))
    return videos


def generative_features(
    rng: np.random.Generator,
    n_scenes: int = 200,
    d: int = 8,
    noise_s: float = 0.5,
    noise_m: float = 1.0,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per-scene (S, M, V) features: S rows and M are independent noisy copies of V.

    S gets one row per static image (K in 3..6); M carries the larger noise.
    Returns three dicts keyed by scene id: S -> (K, d), M -> (d,), V -> (d,).
    """
    s_feats, m_feats, v_feats = {}, {}, {}
    for k in range(n_scenes):
        sid = f"scene_{k:03d}"
        v = rng.standard_normal(d)
        n_keys = int(rng.integers(MIN_KEYS, MAX_KEYS + 1))
        s_feats[sid] = v + noise_s * rng.standard_normal((n_keys, d))
        m_feats[sid] = v + noise_m * rng.standard_normal(d)
        v_feats[sid] = v
    return s_feats, m_feats, v_feats
