"""Portable instruction set for cached state programs, plus seeded realism.

Programs are symbolic: selectors, not coordinates. Environments turn them
into concrete gestures at execution time, which is also where the mouse
paths and keystroke timings below are generated.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, fields
from typing import Any, ClassVar, Mapping, Sequence, Union

from .detectors import Detector, detector_from_dict, detector_to_dict
from .page_model import SelectorAst, parse_selector

__all__ = [
    "FormatError",
    "Navigate",
    "Click",
    "TypeText",
    "PressKey",
    "Hover",
    "Scroll",
    "DragToFraction",
    "WaitFor",
    "Sleep",
    "AssertDetector",
    "Instruction",
    "ActionProgram",
    "PROGRAM_VERSION",
    "serialize_program",
    "deserialize_program",
    "program_to_dict",
    "program_from_dict",
    "instruction_from_dict",
    "RealismParams",
    "plan_mouse_path",
    "path_length",
    "keystroke_schedule",
]

PROGRAM_VERSION = 1
PLACEHOLDER_RE = re.compile(r"^\$\{[A-Za-z_][A-Za-z0-9_]*\}$")


class FormatError(ValueError):
    """Program bytes that cannot be decoded into a valid ActionProgram."""


@dataclass(frozen=True)
class Navigate:
    op: ClassVar[str] = "navigate"
    url: str


@dataclass(frozen=True)
class Click:
    op: ClassVar[str] = "click"
    selector: SelectorAst


@dataclass(frozen=True)
class TypeText:
    op: ClassVar[str] = "type_text"
    selector: SelectorAst
    text: str
    secret: bool = False

    def __post_init__(self) -> None:
        if self.secret and not PLACEHOLDER_RE.match(self.text):
            raise ValueError("secret text must be a ${ENV_NAME} placeholder")


@dataclass(frozen=True)
class PressKey:
    op: ClassVar[str] = "press_key"
    key: str

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("empty key name")


@dataclass(frozen=True)
class Hover:
    op: ClassVar[str] = "hover"
    selector: SelectorAst


@dataclass(frozen=True)
class Scroll:
    op: ClassVar[str] = "scroll"
    delta_y: int


@dataclass(frozen=True)
class DragToFraction:
    op: ClassVar[str] = "drag_to_fraction"
    selector: SelectorAst
    fraction: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.fraction <= 1.0):
            raise ValueError(f"fraction {self.fraction} outside [0, 1]")


@dataclass(frozen=True)
class WaitFor:
    op: ClassVar[str] = "wait_for"
    detector: Detector
    timeout_ms: int

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass(frozen=True)
class Sleep:
    op: ClassVar[str] = "sleep"
    ms: int

    def __post_init__(self) -> None:
        if self.ms < 0:
            raise ValueError("ms must be non-negative")


@dataclass(frozen=True)
class AssertDetector:
    op: ClassVar[str] = "assert_detector"
    detector: Detector


Instruction = Union[
    Navigate, Click, TypeText, PressKey, Hover, Scroll, DragToFraction, WaitFor, Sleep, AssertDetector
]

_OPS: dict[str, type] = {
    cls.op: cls
    for cls in (Navigate, Click, TypeText, PressKey, Hover, Scroll, DragToFraction, WaitFor, Sleep, AssertDetector)
}


@dataclass(frozen=True)
class ActionProgram:
    instructions: tuple[Instruction, ...]
    version: int = PROGRAM_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if not self.instructions:
            raise ValueError("program must contain at least one instruction")

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------


def _instruction_to_dict(ins: Instruction) -> dict[str, Any]:
    out: dict[str, Any] = {"op": ins.op}
    for f in fields(ins):
        value = getattr(ins, f.name)
        if isinstance(value, SelectorAst):
            value = str(value)
        elif isinstance(value, Detector):
            value = detector_to_dict(value)
        out[f.name] = value
    return out


def instruction_from_dict(data: Mapping[str, Any]) -> Instruction:
    if not isinstance(data, Mapping):
        raise FormatError("instruction must be an object")
    op = data.get("op")
    cls = _OPS.get(op)  # type: ignore[arg-type]
    if cls is None:
        raise FormatError(f"unknown op {op!r}")
    expected = {f.name: f for f in fields(cls)}
    extra = set(data) - set(expected) - {"op"}
    if extra:
        raise FormatError(f"{op}: unexpected fields {sorted(extra)}")
    kwargs: dict[str, Any] = {}
    for name, f in expected.items():
        if name not in data:
            if name == "secret":
                continue
            raise FormatError(f"{op}: missing field {name!r}")
        value = data[name]
        try:
            if name == "selector":
                if not isinstance(value, str):
                    raise ValueError("selector must be a string")
                value = parse_selector(value)
            elif name == "detector":
                value = detector_from_dict(value)
            elif name in ("url", "text", "key"):
                if not isinstance(value, str):
                    raise ValueError(f"{name} must be a string")
            elif name == "secret":
                if not isinstance(value, bool):
                    raise ValueError("secret must be a boolean")
            elif name == "fraction":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError("fraction must be a number")
                value = float(value)
            elif name in ("delta_y", "timeout_ms", "ms"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError(f"{name} must be an integer")
        except ValueError as exc:
            raise FormatError(f"{op}: {exc}") from None
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise FormatError(f"{op}: {exc}") from None


def program_to_dict(program: ActionProgram) -> dict[str, Any]:
    return {
        "version": program.version,
        "instructions": [_instruction_to_dict(i) for i in program.instructions],
    }


def program_from_dict(data: Mapping[str, Any]) -> ActionProgram:
    if not isinstance(data, Mapping):
        raise FormatError("program must be an object")
    if "version" not in data:
        raise FormatError("missing version")
    if data["version"] != PROGRAM_VERSION:
        raise FormatError(f"unsupported program version {data['version']!r}")
    items = data.get("instructions")
    if not isinstance(items, list) or not items:
        raise FormatError("instructions must be a non-empty list")
    return ActionProgram(tuple(instruction_from_dict(i) for i in items), PROGRAM_VERSION)


def serialize_program(program: ActionProgram) -> bytes:
    return json.dumps(program_to_dict(program), ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def deserialize_program(data: bytes | str) -> ActionProgram:
    try:
        decoded = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"not a program document: {exc}") from None
    return program_from_dict(decoded)


# --------------------------------------------------------------------------
# Realism
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RealismParams:
    seed: int = 0
    mouse_samples: int = 24
    keystroke_mean_ms: int = 80
    keystroke_jitter_ms: int = 40
    pause_probability: float = 0.05
    pause_ms: int = 350

    def __post_init__(self) -> None:
        if self.mouse_samples < 2:
            raise ValueError("mouse_samples must be >= 2")
        if self.keystroke_mean_ms < 0 or self.keystroke_jitter_ms < 0 or self.pause_ms < 0:
            raise ValueError("timings must be non-negative")
        if not (0.0 <= self.pause_probability <= 1.0):
            raise ValueError("pause_probability outside [0, 1]")


def _rng(seed: int, *parts: object) -> random.Random:
    digest = hashlib.sha256(repr((seed,) + parts).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


Point = tuple[float, float]


def plan_mouse_path(start: Sequence[float], end: Sequence[float], p: RealismParams) -> list[Point]:
    """Cubic Bezier from ``start`` to ``end`` sampled at uniform parameter steps.

    Both control points are drawn inside the endpoints' bounding box grown by
    25% of its extent on each axis, so the whole curve stays inside that box.
    """
    x0, y0 = float(start[0]), float(start[1])
    x3, y3 = float(end[0]), float(end[1])
    rng = _rng(p.seed, "mouse", x0, y0, x3, y3)
    lo_x, hi_x = min(x0, x3), max(x0, x3)
    lo_y, hi_y = min(y0, y3), max(y0, y3)
    pad_x = 0.25 * (hi_x - lo_x)
    pad_y = 0.25 * (hi_y - lo_y)

    def control() -> Point:
        return (rng.uniform(lo_x - pad_x, hi_x + pad_x), rng.uniform(lo_y - pad_y, hi_y + pad_y))

    (x1, y1), (x2, y2) = control(), control()
    n = p.mouse_samples
    path: list[Point] = []
    for i in range(n):
        t = i / (n - 1)
        u = 1.0 - t
        a, b, c, d = u * u * u, 3 * u * u * t, 3 * u * t * t, t * t * t
        path.append((a * x0 + b * x1 + c * x2 + d * x3, a * y0 + b * y1 + c * y2 + d * y3))
    path[0] = (x0, y0)
    path[-1] = (x3, y3)
    return path


def path_length(path: Sequence[Point]) -> float:
    return sum(math.dist(a, b) for a, b in zip(path, path[1:]))


def keystroke_schedule(text: str, p: RealismParams) -> list[tuple[str, int]]:
    """Per-character delays in ms, uniform in mean +/- jitter (clamped at 0) plus random pauses."""
    if not text:
        raise ValueError("text must be non-empty")
    rng = _rng(p.seed, "keys", text)
    lo = p.keystroke_mean_ms - p.keystroke_jitter_ms
    hi = p.keystroke_mean_ms + p.keystroke_jitter_ms
    out = []
    for ch in text:
        delay = max(0, rng.randint(lo, hi))
        if rng.random() < p.pause_probability:
            delay += p.pause_ms
        out.append((ch, delay))
    return out
