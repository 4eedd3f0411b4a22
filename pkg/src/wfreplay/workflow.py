"""Abstract workflows: prose trigger/action rules forming an NFA.

File format::

    workflow: espn_playback
    app: espn
    entry: https://www.disneyplus.sim/login
    max_steps: 60

    [state] login
    trigger: on the login page
    action: enter the credentials and press Log In
    hint.username: ${ESPN_USER}

    [state] playback
    trigger: a video is playing and time is advancing
    end: true

A line ending in ``\\`` continues on the next line; leading whitespace of the
continuation is dropped. ``#`` starts a comment line.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Mapping

__all__ = [
    "AbstractState",
    "AbstractWorkflow",
    "WorkflowError",
    "ParseError",
    "ValidationError",
    "parse_workflow",
    "serialize_workflow",
    "resolve_placeholders",
    "DEFAULT_MAX_STEPS",
]

DEFAULT_MAX_STEPS = 60

_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_HINT_KEY_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_URL_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*://[^/?#\s]+(/[^?#\s]*)?(\?[^#\s]*)?(#\S*)?$")
_WRAP = 88


class WorkflowError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None) -> None:
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ParseError(WorkflowError):
    """The document does not follow the workflow file format."""


class ValidationError(WorkflowError):
    """The document parsed but violates a workflow invariant."""


def _check_prose(value: str, what: str) -> None:
    if "\n" in value or "\r" in value:
        raise ValidationError(f"{what} must be a single line")
    if value != value.strip():
        raise ValidationError(f"{what} has leading or trailing whitespace")
    if value.endswith("\\"):
        raise ValidationError(f"{what} cannot end with a backslash")


@dataclass(frozen=True)
class AbstractState:
    name: str
    trigger_prose: str
    action_prose: str = ""
    is_end: bool = False
    hints: Mapping[str, str] = field(default_factory=dict)
    declaration_index: int = 0

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ValidationError(f"bad state name {self.name!r}")
        if not self.trigger_prose:
            raise ValidationError(f"state {self.name!r}: empty trigger")
        if not self.action_prose and not self.is_end:
            raise ValidationError(f"state {self.name!r}: empty action")
        _check_prose(self.trigger_prose, "trigger")
        _check_prose(self.action_prose, "action")
        for key, value in self.hints.items():
            if not _HINT_KEY_RE.match(key):
                raise ValidationError(f"bad hint key {key!r}")
            _check_prose(value, f"hint.{key}")
        object.__setattr__(self, "hints", dict(self.hints))

    @property
    def progress_clause(self) -> tuple[str, str] | None:
        sel = self.hints.get("progress_selector")
        attr = self.hints.get("progress_attribute")
        if sel and attr:
            return sel, attr
        return None


@dataclass(frozen=True)
class AbstractWorkflow:
    workflow_id: str
    app_label: str
    entry_url: str
    states: tuple[AbstractState, ...]
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        if not self.workflow_id or not re.match(r"^[A-Za-z0-9_.\-]+$", self.workflow_id):
            raise ValidationError(f"bad workflow id {self.workflow_id!r}")
        if not self.app_label:
            raise ValidationError("empty app label")
        if not _URL_RE.match(self.entry_url):
            raise ValidationError(f"entry is not an absolute URL: {self.entry_url!r}")
        if self.max_steps <= 0:
            raise ValidationError("max_steps must be positive")
        if not self.states:
            raise ValidationError("workflow declares no states")
        seen: set[str] = set()
        for i, st in enumerate(self.states):
            if st.name in seen:
                raise ValidationError(f"duplicate state name {st.name!r}")
            seen.add(st.name)
            if st.declaration_index != i:
                raise ValidationError(f"state {st.name!r}: declaration_index {st.declaration_index} != {i}")
        if not any(s.is_end for s in self.states):
            raise ValidationError("workflow has no end state")

    def state(self, name: str) -> AbstractState:
        for st in self.states:
            if st.name == name:
                return st
        raise KeyError(name)

    def __contains__(self, name: object) -> bool:
        return any(s.name == name for s in self.states)

    @property
    def end_states(self) -> tuple[AbstractState, ...]:
        return tuple(s for s in self.states if s.is_end)


def _logical_lines(text: str) -> list[tuple[int, str]]:
    """Join backslash continuations; returns (first physical line number, content)."""
    out: list[tuple[int, str]] = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        start = i + 1
        line = lines[i]
        while line.endswith("\\"):
            i += 1
            if i >= len(lines):
                raise ParseError("continuation at end of file", start, len(line))
            line = line[:-1] + lines[i].lstrip()
        out.append((start, line))
        i += 1
    return out


def parse_workflow(document: str | bytes) -> AbstractWorkflow:
    """Parse and validate a workflow document.

    Raises ParseError for format problems and ValidationError for invariant
    violations; both carry a line (and column where meaningful).
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            line = document[: exc.start].count(b"\n") + 1
            raise ParseError("invalid UTF-8", line, 1) from None
    if document.startswith("﻿"):
        document = document[1:]

    header: dict[str, tuple[int, str]] = {}
    blocks: list[dict] = []
    current: dict | None = None

    for lineno, raw in _logical_lines(document):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            m = re.match(r"^\[state\][ \t]+(\S+)$", line)
            if not m:
                raise ParseError("expected '[state] <name>'", lineno, 1)
            col = raw.index(m.group(1)) + 1
            current = {"name": m.group(1), "line": lineno, "col": col, "fields": {}, "hints": {}}
            blocks.append(current)
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ParseError("expected 'key: value'", lineno, 1)
        key = key.strip()
        value = value.strip()
        if current is None:
            if key not in ("workflow", "app", "entry", "max_steps"):
                raise ParseError(f"unknown header key {key!r}", lineno, 1)
            if key in header:
                raise ParseError(f"repeated header key {key!r}", lineno, 1)
            header[key] = (lineno, value)
            continue
        if key.startswith("hint."):
            hkey = key[5:]
            if not _HINT_KEY_RE.match(hkey):
                raise ParseError(f"bad hint key {hkey!r}", lineno, 1)
            if hkey in current["hints"]:
                raise ParseError(f"repeated hint {hkey!r}", lineno, 1)
            current["hints"][hkey] = value
        elif key in ("trigger", "action", "end"):
            if key in current["fields"]:
                raise ParseError(f"repeated field {key!r}", lineno, 1)
            current["fields"][key] = (lineno, value)
        else:
            raise ParseError(f"unknown state field {key!r}", lineno, 1)

    for key in ("workflow", "app", "entry"):
        if key not in header:
            raise ParseError(f"missing header '{key}:'", 1, 1)
    max_steps = DEFAULT_MAX_STEPS
    if "max_steps" in header:
        ln, val = header["max_steps"]
        if not re.fullmatch(r"[0-9]+", val):
            raise ParseError("max_steps must be an integer", ln, 1)
        max_steps = int(val)
        if max_steps <= 0:
            raise ValidationError("max_steps must be positive", ln, 1)

    states: list[AbstractState] = []
    seen: set[str] = set()
    for i, blk in enumerate(blocks):
        ln, col = blk["line"], blk["col"]
        name = blk["name"]
        if name in seen:
            raise ValidationError(f"duplicate state name {name!r}", ln, col)
        seen.add(name)
        fields = blk["fields"]
        is_end = False
        if "end" in fields:
            eln, ev = fields["end"]
            if ev not in ("true", "false"):
                raise ParseError("end must be 'true' or 'false'", eln, 1)
            is_end = ev == "true"
        try:
            states.append(
                AbstractState(
                    name=name,
                    trigger_prose=fields.get("trigger", (ln, ""))[1],
                    action_prose=fields.get("action", (ln, ""))[1],
                    is_end=is_end,
                    hints=blk["hints"],
                    declaration_index=i,
                )
            )
        except ValidationError as exc:
            raise ValidationError(exc.message, ln, col) from None

    try:
        return AbstractWorkflow(
            workflow_id=header["workflow"][1],
            app_label=header["app"][1],
            entry_url=header["entry"][1],
            states=tuple(states),
            max_steps=max_steps,
        )
    except ValidationError as exc:
        if exc.line is not None:
            raise
        raise ValidationError(exc.message, 1, 1) from None


def _wrap(prefix: str, value: str) -> list[str]:
    """Split long values at single spaces using backslash continuations."""
    line = prefix + value
    if len(line) <= _WRAP:
        return [line]
    out: list[str] = []
    while len(line) > _WRAP:
        cut = -1
        for i in range(_WRAP - 2, len(prefix), -1):
            if line[i] == " " and line[i - 1] != " " and i + 1 < len(line) and line[i + 1] != " ":
                cut = i
                break
        if cut < 0:
            break
        out.append(line[: cut + 1] + "\\")
        line = "    " + line[cut + 1 :]
    out.append(line)
    return out


def serialize_workflow(w: AbstractWorkflow) -> str:
    lines = [f"workflow: {w.workflow_id}", f"app: {w.app_label}", f"entry: {w.entry_url}"]
    if w.max_steps != DEFAULT_MAX_STEPS:
        lines.append(f"max_steps: {w.max_steps}")
    for st in w.states:
        lines.append("")
        lines.append(f"[state] {st.name}")
        lines.extend(_wrap("trigger: ", st.trigger_prose))
        if st.action_prose:
            lines.extend(_wrap("action: ", st.action_prose))
        if st.is_end:
            lines.append("end: true")
        for key, value in st.hints.items():
            lines.extend(_wrap(f"hint.{key}: ", value))
    return "\n".join(lines) + "\n"


def resolve_placeholders(value: str, environ: Mapping[str, str] | None = None) -> str:
    """Substitute ``${NAME}`` from ``environ`` (default: process environment).

    Unknown names raise KeyError so secrets are never silently blanked.
    """
    env = os.environ if environ is None else environ

    def sub(m: re.Match[str]) -> str:
        return env[m.group(1)]

    return _PLACEHOLDER_RE.sub(sub, value)
