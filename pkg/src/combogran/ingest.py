"""Annotation timelines, key-frame extraction, sample emission and trainer logs."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .granularity import Sample, dumps_sample
from .modal import FrameRef, UsageError


class FormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class ActionEvent:
    timestamp: float
    description: str


def _timeline_rows(path: Path):
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".jsonl", ".json") or text.lstrip().startswith("{"):
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    yield lineno, rec["timestamp"], rec["description"]
                except (ValueError, KeyError, TypeError) as exc:
                    raise FormatError(path, lineno, f"bad JSON timeline record ({exc})") from exc
        return
    reader = csv.reader(text.splitlines())
    for lineno, row in enumerate(reader, 1):
        if not row or not "".join(row).strip():
            continue
        if lineno == 1 and row[0].strip().lower() == "timestamp":
            continue
        if len(row) < 2:
            raise FormatError(path, lineno, "expected timestamp,description")
        yield lineno, row[0], ",".join(row[1:]).strip()


def parse_timeline(path: str | Path) -> list[ActionEvent]:
    """Timestamped action descriptions; timestamps must strictly increase."""
    path = Path(path)
    events: list[ActionEvent] = []
    for lineno, ts, desc in _timeline_rows(path):
        try:
            t = float(ts)
        except (TypeError, ValueError):
            raise FormatError(path, lineno, f"timestamp {ts!r} is not a number") from None
        if not math.isfinite(t) or t < 0:
            raise FormatError(path, lineno, f"timestamp {t} must be finite and >= 0")
        if events and t <= events[-1].timestamp:
            what = "duplicate" if t == events[-1].timestamp else "out-of-order"
            raise FormatError(path, lineno, f"{what} timestamp {t} (previous {events[-1].timestamp})")
        events.append(ActionEvent(t, str(desc)))
    return events


def parse_timelines(paths: Iterable[str | Path]) -> dict[str, list[ActionEvent]]:
    """One scene group per file, keyed by file stem."""
    return {Path(p).stem: parse_timeline(p) for p in sorted(paths, key=str)}


@dataclass
class KeyframeMatch:
    matched: list[tuple[FrameRef, ActionEvent]] = field(default_factory=list)
    unmatched: list[ActionEvent] = field(default_factory=list)


def extract_keyframes(frames: Sequence[FrameRef], events: Iterable[ActionEvent]) -> KeyframeMatch:
    """For each event, the last frame strictly before it."""
    stamps = [f.timestamp for f in frames]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        raise ValueError("frames must be sorted by timestamp")
    out = KeyframeMatch()
    for ev in events:
        i = bisect.bisect_left(stamps, ev.timestamp) - 1
        if i < 0:
            out.unmatched.append(ev)
        else:
            out.matched.append((frames[i], ev))
    return out


def emit_samples(pairs: Iterable, path: str | Path) -> int:
    """Write (FrameRef, ActionEvent) pairs as {image, instruction}; Samples use the full schema."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in pairs:
            if isinstance(item, Sample):
                line = dumps_sample(item)
            else:
                frame, event = item
                if not getattr(frame, "content", None):
                    raise ValueError(f"frame {getattr(frame, 'frame_index', '?')} has no media reference")
                line = json.dumps({"image": frame.content, "instruction": event.description},
                                  ensure_ascii=False)
            fh.write(line + "\n")
            n += 1
    return n


# -- trainer logs ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerLogEntry:
    step: int
    epoch: float
    train_loss: float | None = None
    eval_loss: float | None = None
    extra: dict = field(default_factory=dict, compare=False, hash=False)


_STEP_KEYS = ("current_steps", "step")
_LOSS_KEYS = ("loss", "train_loss")
_KNOWN = {*_STEP_KEYS, *_LOSS_KEYS, "eval_loss", "epoch"}


def _first(rec: dict, keys) -> object:
    for k in keys:
        if rec.get(k) is not None:
            return rec[k]
    return None


def parse_trainer_log(path: str | Path) -> list[TrainerLogEntry]:
    entries: list[TrainerLogEntry] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                step = _first(rec, _STEP_KEYS)
                if step is None:
                    raise KeyError("step/current_steps")
                loss = _first(rec, _LOSS_KEYS)
                ev = rec.get("eval_loss")
                entry = TrainerLogEntry(int(step), float(rec.get("epoch", 0.0)),
                                        None if loss is None else float(loss),
                                        None if ev is None else float(ev),
                                        {k: v for k, v in rec.items() if k not in _KNOWN})
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(path, lineno, f"bad trainer log record ({exc})") from exc
            if entries and entry.step < entries[-1].step:
                raise FormatError(path, lineno, f"step {entry.step} after {entries[-1].step}")
            entries.append(entry)
    return entries


@dataclass(frozen=True)
class EarlyStop:
    best_index: int
    best_step: int
    best_epoch: float
    best_loss: float
    stop_index: int | None
    stop_step: int | None
    delta: float
    patience: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def select_early_stop(entries: Sequence[TrainerLogEntry], patience: int = 3,
                      delta: float | None = None) -> EarlyStop:
    """Best checkpoint = first global minimum of eval loss.

    The stop point is the end of the first run of ``patience`` consecutive
    evaluations after the minimum that all exceed ``best + delta``; with no
    such run there is no stop.  ``delta`` defaults to 1% of the minimum.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    evals = [e for e in entries if e.eval_loss is not None]
    if not evals:
        raise UsageError("trainer log has no eval_loss entries")
    losses = [e.eval_loss for e in evals]
    best = min(range(len(losses)), key=losses.__getitem__)
    if delta is None:
        delta = 0.01 * abs(losses[best])
    stop = None
    run = 0
    for i in range(best + 1, len(losses)):
        run = run + 1 if losses[i] > losses[best] + delta else 0
        if run >= patience:
            stop = i
            break
    b = evals[best]
    return EarlyStop(best, b.step, b.epoch, b.eval_loss, stop,
                     evals[stop].step if stop is not None else None, delta, patience)


def write_loss_curve(entries: Sequence[TrainerLogEntry], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "train_loss", "eval_loss"])
        for e in entries:
            w.writerow([e.step, e.epoch, "" if e.train_loss is None else e.train_loss,
                        "" if e.eval_loss is None else e.eval_loss])
