"""Executor action strings: tolerant parsing and canonical rendering.

Accepted forms (an optional leading ``Action:`` is stripped)::

    click(start_box='(257,671)')      also click(start_box=(257,671)') as seen in logs
    double_click(start_box='(x,y)')   also left_double / double-click
    hotkey(f1)  hotkey(key='ctrl+c')  hotkey(ctrl c)
    type(content='text')

Points are normalized to 0-1000 per axis.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

_NUM = r"-?\d+(?:\.\d+)?"
_POINT = re.compile(rf"\(?\s*({_NUM})\s*,\s*({_NUM})\s*\)?")
_CALL = re.compile(r"^\s*([A-Za-z_][\w\-]*)\s*\((.*)$", re.S)
_PREFIX = re.compile(r"^\s*action\s*:\s*", re.I)

CLICK_NAMES = {"click", "left_single", "left_click"}
DOUBLE_NAMES = {"double_click", "double-click", "doubleclick", "left_double"}


def _num(text: str) -> str:
    v = float(text)
    return str(int(v)) if v.is_integer() else repr(v)


@dataclass(frozen=True)
class Click:
    x: float
    y: float
    raw: str = field(default="", compare=False)

    def render(self) -> str:
        return f"click(start_box='({_num(self.x)},{_num(self.y)})')"


@dataclass(frozen=True)
class DoubleClick:
    x: float
    y: float
    raw: str = field(default="", compare=False)

    def render(self) -> str:
        return f"double_click(start_box='({_num(self.x)},{_num(self.y)})')"


@dataclass(frozen=True)
class Hotkey:
    key: str
    raw: str = field(default="", compare=False)

    def render(self) -> str:
        return f"hotkey({self.key})"


@dataclass(frozen=True)
class HotkeyCombo:
    keys: tuple[str, ...]
    raw: str = field(default="", compare=False)

    def render(self) -> str:
        return f"hotkey({'+'.join(self.keys)})"


@dataclass(frozen=True)
class TypeText:
    text: str
    raw: str = field(default="", compare=False)

    def render(self) -> str:
        return f"type(content='{self.text}')"


@dataclass(frozen=True)
class ParseFailure:
    text: str
    reason: str

    def render(self) -> str:
        return self.text


Action = Union[Click, DoubleClick, Hotkey, HotkeyCombo, TypeText]


def _strip_args(args: str) -> str:
    args = args.strip()
    if args.endswith(")"):
        args = args[:-1]
    return args.strip()


def _point(args: str, raw: str):
    m = _POINT.search(args)
    if m is None:
        return None, ParseFailure(raw, "no coordinate pair")
    x, y = float(m.group(1)), float(m.group(2))
    if not (0 <= x <= 1000 and 0 <= y <= 1000):
        return None, ParseFailure(raw, f"coordinates ({m.group(1)},{m.group(2)}) outside 0..1000")
    return (x, y), None


def parse_action(text: str) -> Action | ParseFailure:
    raw = text
    body = _PREFIX.sub("", text or "", count=1).strip()
    m = _CALL.match(body)
    if m is None:
        return ParseFailure(raw, "not an action call")
    name = m.group(1).lower()
    args = _strip_args(m.group(2))

    if name in CLICK_NAMES or name in DOUBLE_NAMES:
        pt, err = _point(args, raw)
        if err:
            return err
        return (Click if name in CLICK_NAMES else DoubleClick)(pt[0], pt[1], raw)

    if name == "hotkey":
        keys = re.sub(r"^\s*key\s*=\s*", "", args)
        keys = keys.strip().strip("'\"").strip().lower()
        parts = [k for k in re.split(r"[+\s]+", keys) if k]
        if not parts:
            return ParseFailure(raw, "hotkey without a key")
        if any(not re.fullmatch(r"[\w\-]+", k) for k in parts):
            return ParseFailure(raw, f"bad key name in {keys!r}")
        return Hotkey(parts[0], raw) if len(parts) == 1 else HotkeyCombo(tuple(parts), raw)

    if name == "type":
        first = min((i for i in (args.find("'"), args.find('"')) if i >= 0), default=-1)
        last = max(args.rfind("'"), args.rfind('"'))
        if first < 0 or last <= first:
            return ParseFailure(raw, "type() without quoted content")
        return TypeText(args[first + 1:last], raw)

    return ParseFailure(raw, f"unknown action {name!r}")


def render(action: Action | ParseFailure) -> str:
    return action.render()
