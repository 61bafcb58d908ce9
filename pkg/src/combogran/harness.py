"""Closed perception/instruction/execution loop over a scripted environment.

Each step: capture the screen, ask the model for one instruction line, let
the executor ground it to an action string, map the point through the
click calibration, hit-test, apply the transition, wait the refresh ticks
and measure how much the screen changed.  Too little change for
``patience`` consecutive steps ends the episode.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .actions import Click, DoubleClick, Hotkey, HotkeyCombo, ParseFailure, TypeText, parse_action
from .calibration import ScreenGeometry, linear_map

ICON_ERROR = "IconRecognitionError"
REDUNDANT = "RedundantAction"
PLATFORM_CONFUSION = "PlatformConfusion"
MINIMAL_CHANGE = "MinimalInterfaceChange"
FAILURE_KINDS = (ICON_ERROR, REDUNDANT, PLATFORM_CONFUSION)


# -- screens ---------------------------------------------------------------------

@dataclass(frozen=True)
class Widget:
    name: str
    label: str
    rect: tuple[int, int, int, int]  # x0, y0, x1, y1 in px, inclusive-exclusive
    state: tuple[str, ...] = ()
    color: str | None = None

    def contains(self, px: int, py: int) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 <= px < x1 and y0 <= py < y1

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        return (x0 + x1) / 2, (y0 + y1) / 2


@dataclass(frozen=True)
class Screen:
    frame_id: str
    platform: str
    widgets: tuple[Widget, ...]
    cursor: str = "arrow"

    @property
    def digest(self) -> str:
        """Structural hash of widget states; the cursor is not part of it."""
        body = json.dumps([[w.name, list(w.state)] for w in sorted(self.widgets, key=lambda w: w.name)])
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def widget(self, name: str) -> Widget | None:
        return next((w for w in self.widgets if w.name == name), None)

    def hit(self, px: int, py: int) -> Widget | None:
        return next((w for w in self.widgets if w.contains(px, py)), None)


def screen_delta(prev: Screen, cur: Screen) -> float:
    """Share of widgets (over both screens) whose state changed, appeared or vanished."""
    if prev.digest == cur.digest:
        return 0.0
    a = {w.name: w.state for w in prev.widgets}
    b = {w.name: w.state for w in cur.widgets}
    names = a.keys() | b.keys()
    changed = sum(1 for n in names if a.get(n) != b.get(n))
    return changed / len(names)


def detect_stall(prev: Screen, cur: Screen, epsilon: float = 0.05) -> bool:
    return screen_delta(prev, cur) < epsilon


# -- environment -------------------------------------------------------------------

class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    to: str
    delay: int = 0


@dataclass
class EnvScript:
    platform: str
    geometry: ScreenGeometry
    start: str
    success: str
    widgets: dict[str, dict]
    screens: dict[str, dict]
    refresh_ticks: int = 0

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EnvScript":
        try:
            w, h = doc["screen"]
            script = cls(doc["platform"], ScreenGeometry(int(w), int(h)), doc["start"],
                         doc["success_condition"]["screen"],
                         {x["name"]: x for x in doc["widgets"]}, dict(doc["screens"]),
                         int(doc.get("refresh_ticks", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ScriptError(f"malformed environment script: {exc}") from exc
        script.check()
        return script

    @classmethod
    def load(cls, path: str | Path) -> "EnvScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def check(self) -> None:
        geom = self.geometry
        for name, w in self.widgets.items():
            x0, y0, x1, y1 = w["rect"]
            if not (0 <= x0 < x1 <= geom.width_px and 0 <= y0 < y1 <= geom.height_px):
                raise ScriptError(f"{self.platform}: widget {name} rect {w['rect']} outside the screen")
        for sid in (self.start, self.success):
            if sid not in self.screens:
                raise ScriptError(f"{self.platform}: unknown screen {sid!r}")
        for sid, s in self.screens.items():
            for wname in s.get("widgets", {}):
                if wname not in self.widgets:
                    raise ScriptError(f"{self.platform}: screen {sid} shows undefined widget {wname}")
            for key, t in s.get("transitions", {}).items():
                target = t if isinstance(t, str) else t.get("to")
                if target not in self.screens:
                    raise ScriptError(f"{self.platform}: {sid} --{key}--> unknown screen {target!r}")

    def transitions(self, screen_id: str) -> dict[str, Transition]:
        out = {}
        for key, t in self.screens[screen_id].get("transitions", {}).items():
            out[key] = Transition(t) if isinstance(t, str) else Transition(t["to"], int(t.get("delay", 0)))
        return out

    def screen(self, screen_id: str) -> Screen:
        s = self.screens[screen_id]
        widgets = []
        for name, state in s.get("widgets", {}).items():
            d = self.widgets[name]
            widgets.append(Widget(name, d["label"], tuple(d["rect"]), tuple(state), d.get("color")))
        return Screen(screen_id, self.platform, tuple(widgets), s.get("cursor", "arrow"))

    @property
    def labels(self) -> set[str]:
        return {w["label"].lower() for w in self.widgets.values()}


class ScriptedEnv:
    """Screen graph with delayed transitions measured in abstract ticks."""

    def __init__(self, script: EnvScript):
        self.script = script
        self.current = script.start
        self.tick = 0
        self.pending: tuple[str, int] | None = None

    def observe(self) -> Screen:
        return self.script.screen(self.current)

    def apply(self, key: str) -> bool:
        """Schedule the transition for ``key``; False when the screen has none."""
        if self.pending is not None:
            return False
        t = self.script.transitions(self.current).get(key)
        if t is None:
            return False
        self.pending = (t.to, self.tick + t.delay)
        return True

    def wait(self, ticks: int) -> None:
        self.tick += ticks
        if self.pending is not None and self.tick >= self.pending[1]:
            self.current = self.pending[0]
            self.pending = None

    @property
    def done(self) -> bool:
        return self.current == self.script.success


# -- bundled platforms -----------------------------------------------------------

def bundled_platforms() -> list[str]:
    root = resources.files("combogran") / "platforms"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_platform(name: str) -> EnvScript:
    """A bundled script by file stem (``platform_b``) or a path to a JSON script."""
    if name.endswith(".json") or "/" in name:
        return EnvScript.load(name)
    res = resources.files("combogran") / "platforms" / f"{name}.json"
    if not res.is_file():
        raise ScriptError(f"unknown platform {name!r}; bundled: {', '.join(bundled_platforms())}")
    return EnvScript.from_dict(json.loads(res.read_text(encoding="utf-8")))


def foreign_labels(script: EnvScript, others: Sequence[EnvScript] | None = None) -> set[str]:
    """Widget labels that exist on other platforms but not on this one."""
    if others is None:
        others = [load_platform(n) for n in bundled_platforms()]
    out = set()
    for o in others:
        if o.platform != script.platform:
            out |= o.labels
    return out - script.labels


# -- instructions -------------------------------------------------------------------

def instruction_for(script: EnvScript, key: str) -> str:
    """Natural-language instruction for a transition key."""
    kind, _, arg = key.partition(":")
    if kind == "hotkey":
        return f"Press the hotkey {arg.upper()}"
    w = script.widgets[arg]
    verb = "Double-click" if kind == "dclick" else "Click"
    if w.get("color"):
        return f"{verb} the {w['color']} [{w['label']}] icon"
    return f"{verb} [{w['label']}]"


_BRACKET = re.compile(r"^(double-click|click)\s+(?:the\s+)?(?:([a-z]+)(?:-colored)?\s+)?\[([^\]]+)\]", re.I)
_PLAIN = re.compile(r"^(double-click|click)\s+(?:the\s+)?[\"']?(.+?)[\"']?\s*$", re.I)
_HOTKEY = re.compile(r"^press\s+(?:the\s+)?hotkey\s+([\w+\-]+)", re.I)


@dataclass(frozen=True)
class Intent:
    verb: str  # "click" | "double-click" | "hotkey"
    label: str
    color: str | None = None


def read_instruction(text: str) -> Intent | None:
    text = text.strip().rstrip(".")
    m = _HOTKEY.match(text)
    if m:
        return Intent("hotkey", m.group(1).lower())
    m = _BRACKET.match(text)
    if m:
        return Intent(m.group(1).lower(), m.group(3).strip(), m.group(2).lower() if m.group(2) else None)
    m = _PLAIN.match(text)
    if m:
        return Intent(m.group(1).lower(), m.group(2).strip())
    return None


# -- executor ----------------------------------------------------------------------

Mapper = Callable[[ScreenGeometry, tuple[float, float]], tuple[int, int]]


@dataclass
class Grounding:
    action_text: str | None
    target: str | None  # label the instruction named, if any


class Executor:
    """Grounds instructions on the visible widgets and emits action strings."""

    def __init__(self, geometry: ScreenGeometry, mapper: Mapper = linear_map):
        self.geometry = geometry
        self.mapper = mapper

    def _normalize(self, px: float, extent: int) -> int:
        return int(round(px / extent * 1000))

    def ground(self, text: str, screen: Screen) -> Grounding:
        if not text.strip():
            return Grounding(None, None)
        if not isinstance(parse_action(text), ParseFailure):
            return Grounding(text.strip(), None)
        intent = read_instruction(text)
        if intent is None:
            return Grounding(None, None)
        if intent.verb == "hotkey":
            return Grounding(f"hotkey({intent.label})", None)
        matches = [w for w in screen.widgets if w.label.lower() == intent.label.lower()
                   and (intent.color is None or (w.color or "").lower() == intent.color)]
        if not matches:
            return Grounding(None, intent.label)
        cx, cy = matches[0].center
        x = self._normalize(cx, self.geometry.width_px)
        y = self._normalize(cy, self.geometry.height_px)
        name = "double_click" if intent.verb == "double-click" else "click"
        return Grounding(f"{name}(start_box='({x},{y})')", intent.label)

    def to_pixel(self, x: float, y: float) -> tuple[int, int]:
        return self.mapper(self.geometry, (x, y))


# -- models --------------------------------------------------------------------------

class Model(Protocol):
    def __call__(self, screen: Screen) -> str: ...


def plan(script: EnvScript, start: str) -> list[str]:
    """Shortest transition-key path from ``start`` to the success screen."""
    queue = deque([start])
    parent: dict[str, tuple[str, str] | None] = {start: None}
    while queue:
        sid = queue.popleft()
        if sid == script.success:
            path = []
            while parent[sid] is not None:
                prev, key = parent[sid]
                path.append(key)
                sid = prev
            return path[::-1]
        for key, t in script.transitions(sid).items():
            if t.to not in parent:
                parent[t.to] = (sid, key)
                queue.append(t.to)
    return []


class ScriptedOracle:
    """Always names the next action on a shortest path to success."""

    def __init__(self, script: EnvScript):
        self.script = script

    def __call__(self, screen: Screen) -> str:
        path = plan(self.script, screen.frame_id)
        return instruction_for(self.script, path[0]) if path else ""


class NoisyOracle:
    """Oracle whose instruction is replaced, with probability ``p_error``, by a
    wrong-colored icon, a widget from another platform, or a repeated action."""

    def __init__(self, script: EnvScript, rng: np.random.Generator, p_error: float = 0.2,
                 mix: Mapping[str, float] | None = None, foreign: Sequence[str] = ()):
        self.script = script
        self.rng = rng
        self.p_error = p_error
        self.mix = dict(mix or {ICON_ERROR: 1 / 3, PLATFORM_CONFUSION: 1 / 3, REDUNDANT: 1 / 3})
        self.foreign = sorted(foreign)
        self.history: list[str] = []

    def _substitute(self, kind: str, key: str, screen: Screen) -> str | None:
        if kind == PLATFORM_CONFUSION and self.foreign:
            return f"Click [{self.foreign[int(self.rng.integers(len(self.foreign)))]}]"
        if kind == REDUNDANT and self.history:
            return self.history[-1]
        if kind == ICON_ERROR and key.startswith("click:"):
            w = self.script.widgets[key[6:]]
            for other in screen.widgets:
                if other.label == w["label"] and other.color and other.color != w.get("color"):
                    return f"Click the {other.color} [{other.label}] icon"
        return None

    def __call__(self, screen: Screen) -> str:
        path = plan(self.script, screen.frame_id)
        if not path:
            return ""
        text = instruction_for(self.script, path[0])
        if self.rng.random() < self.p_error:
            kinds = list(self.mix)
            p = np.array([self.mix[k] for k in kinds], dtype=float)
            kind = kinds[int(self.rng.choice(len(kinds), p=p / p.sum()))]
            text = self._substitute(kind, path[0], screen) or text
        else:
            self.history.append(text)
        return text


class ReplayModel:
    """Feeds recorded instruction lines in order, then empty strings."""

    def __init__(self, lines: Sequence[str]):
        self.lines = list(lines)
        self.pos = 0

    def __call__(self, screen: Screen) -> str:
        if self.pos >= len(self.lines):
            return ""
        self.pos += 1
        return self.lines[self.pos - 1]


# -- loop ------------------------------------------------------------------------------

@dataclass
class HarnessConfig:
    max_steps: int = 20
    epsilon: float = 0.05
    patience: int = 2
    refresh_ticks: int | None = None  # None: the script's own refresh time

    def to_dict(self) -> dict:
        return {"max_steps": self.max_steps, "epsilon": self.epsilon,
                "patience": self.patience, "refresh_ticks": self.refresh_ticks}


@dataclass
class LoopEvent:
    step: int
    screenshot: str
    frame: str
    model_output: str
    action: str | None
    parse_error: str | None
    pixel: tuple[int, int] | None
    executed: str  # "hit:<widget>", "key:<name>", "miss" or "none"
    wait_ticks: int
    post_delta: float
    candidate: str | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "screenshot": self.screenshot,
            "frame": self.frame,
            "model_output": self.model_output,
            "action": self.action,
            "parse_error": self.parse_error,
            "pixel": list(self.pixel) if self.pixel else None,
            "executed": self.executed,
            "wait_ticks": self.wait_ticks,
            "post_delta": round(self.post_delta, 6),
            "candidate": self.candidate,
        }


@dataclass
class EpisodeLog:
    platform: str
    config: HarnessConfig
    events: list[LoopEvent] = field(default_factory=list)
    outcome: str = ""
    attribution: str | None = None

    def to_jsonl(self) -> str:
        lines = [{"platform": self.platform, "config": self.config.to_dict()}]
        lines += [e.to_dict() for e in self.events]
        lines.append({"outcome": self.outcome, "attribution": self.attribution,
                      "steps": len(self.events)})
        return "".join(json.dumps(x, ensure_ascii=False) + "\n" for x in lines)


class Loop:
    def __init__(self, env: ScriptedEnv, model: Model, executor: Executor | None = None,
                 config: HarnessConfig | None = None, foreign: set[str] | None = None):
        self.env = env
        self.model = model
        self.executor = executor or Executor(env.script.geometry)
        self.config = config or HarnessConfig()
        self.foreign = foreign if foreign is not None else foreign_labels(env.script)
        self.satisfied: set[str] = set()
        self.n_steps = 0

    def _key_for(self, action, screen: Screen) -> tuple[str | None, str, tuple[int, int] | None]:
        if isinstance(action, (Click, DoubleClick)):
            pixel = self.executor.to_pixel(action.x, action.y)
            w = screen.hit(*pixel)
            if w is None:
                return None, "miss", pixel
            kind = "dclick" if isinstance(action, DoubleClick) else "click"
            key = f"{kind}:{w.name}"
            if kind == "dclick" and key not in self.env.script.transitions(screen.frame_id):
                key = f"click:{w.name}"
            return key, f"hit:{w.name}", pixel
        if isinstance(action, Hotkey):
            return f"hotkey:{action.key}", f"key:{action.key}", None
        if isinstance(action, HotkeyCombo):
            return f"hotkey:{'+'.join(action.keys)}", f"key:{'+'.join(action.keys)}", None
        if isinstance(action, TypeText):
            return f"type:{action.text}", "typed", None
        return None, "none", None

    def _attribute(self, screen: Screen, key: str | None, target: str | None,
                   fired: bool, delta: float) -> str | None:
        if target is not None and key is None and target.lower() in self.foreign:
            return PLATFORM_CONFUSION
        if fired:
            return MINIMAL_CHANGE if delta < self.config.epsilon else None
        if key is not None and key in self.satisfied:
            return REDUNDANT
        if key is not None and key.startswith(("click:", "dclick:")):
            hit = screen.widget(key.split(":", 1)[1])
            live = self.env.script.transitions(screen.frame_id)
            for w in screen.widgets:
                if (w.name != hit.name and w.label == hit.label and w.color != hit.color
                        and any(k.endswith(f":{w.name}") for k in live)):
                    return ICON_ERROR
        return None

    def step(self) -> LoopEvent:
        self.n_steps += 1
        screen = self.env.observe()
        text = self.model(screen) or ""
        g = self.executor.ground(text, screen)
        action = parse_action(g.action_text) if g.action_text else None
        parse_error = action.reason if isinstance(action, ParseFailure) else None
        key, executed, pixel = self._key_for(action, screen) if action is not None else (None, "miss" if g.target else "none", None)
        fired = self.env.apply(key) if key else False
        ticks = self.config.refresh_ticks if self.config.refresh_ticks is not None else self.env.script.refresh_ticks
        self.env.wait(ticks)
        after = self.env.observe()
        delta = screen_delta(screen, after)
        if fired:
            self.satisfied.add(key)
        candidate = None
        if delta < self.config.epsilon:
            candidate = self._attribute(screen, key, g.target, fired, delta)
        return LoopEvent(self.n_steps, screen.digest, screen.frame_id, text,
                         action.render() if action is not None and not parse_error else g.action_text,
                         parse_error, pixel, executed, ticks, delta, candidate)


def run_episode(env: ScriptedEnv, model: Model, config: HarnessConfig | None = None,
                executor: Executor | None = None, foreign: set[str] | None = None) -> EpisodeLog:
    loop = Loop(env, model, executor, config, foreign)
    cfg = loop.config
    log = EpisodeLog(env.script.platform, cfg)
    quiet: list[LoopEvent] = []
    while True:
        ev = loop.step()
        log.events.append(ev)
        if env.done:
            log.outcome = "Success"
            break
        if ev.post_delta < cfg.epsilon:
            quiet.append(ev)
        else:
            quiet = []
        if len(quiet) >= cfg.patience:
            attrs = [e.candidate for e in reversed(quiet) if e.candidate]
            attr = attrs[0] if attrs else None
            log.attribution = attr
            log.outcome = f"Failure({attr})" if attr in FAILURE_KINDS else "Stall"
            break
        if ev.step >= cfg.max_steps:
            log.outcome = "MaxSteps"
            break
    return log
