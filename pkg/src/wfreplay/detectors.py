"""State-recognition predicates over page snapshots.

A detector set is the conjunction of its required detectors; optional
detectors only contribute to the score used for ranking. Several detector
sets on one concrete state act as alternatives (OR).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Mapping, Sequence

from .page_model import (
    PageSnapshot,
    SelectorAst,
    parse_selector,
    query_selector,
    subtree_text,
)

__all__ = [
    "DetectorKind",
    "Detector",
    "DetectorSet",
    "MatchResult",
    "element",
    "text",
    "url",
    "glob_to_regex",
    "match_detector",
    "match_detector_set",
    "detector_to_dict",
    "detector_from_dict",
    "detector_set_to_list",
    "detector_set_from_list",
]


class DetectorKind(str, Enum):
    ELEMENT = "element"
    TEXT = "text"
    URL = "url"


@dataclass(frozen=True)
class Detector:
    kind: DetectorKind
    selector: SelectorAst | None = None  # element
    needle: str | None = None  # text
    subtree_of: SelectorAst | None = None  # text scope; None means anywhere
    glob: str | None = None  # url
    required: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if self.kind is DetectorKind.ELEMENT and self.selector is None:
            raise ValueError("element detector needs a selector")
        if self.kind is DetectorKind.TEXT and not self.needle:
            raise ValueError("text detector needs a non-empty needle")
        if self.kind is DetectorKind.URL and not self.glob:
            raise ValueError("url detector needs a non-empty glob")


def element(selector: str | SelectorAst, required: bool = True) -> Detector:
    return Detector(DetectorKind.ELEMENT, selector=parse_selector(selector), required=required)


def text(needle: str, subtree_of: str | SelectorAst | None = None, required: bool = True) -> Detector:
    scope = parse_selector(subtree_of) if subtree_of is not None else None
    return Detector(DetectorKind.TEXT, needle=needle, subtree_of=scope, required=required)


def url(glob: str, required: bool = True) -> Detector:
    return Detector(DetectorKind.URL, glob=glob, required=required)


@dataclass(frozen=True)
class DetectorSet:
    detectors: tuple[Detector, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if not self.detectors:
            raise ValueError("detector set must be non-empty")
        if not any(d.required for d in self.detectors):
            raise ValueError("detector set needs at least one required detector")

    def __len__(self) -> int:
        return len(self.detectors)


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    score: int
    required_failed: int | None = None


@lru_cache(maxsize=1024)
def glob_to_regex(glob: str) -> re.Pattern[str]:
    """``*`` spans anything (including ``/``), ``?`` is one character, the rest is literal."""
    parts = []
    for ch in glob:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def match_detector(d: Detector, snap: PageSnapshot) -> bool:
    if d.kind is DetectorKind.ELEMENT:
        return bool(query_selector(snap.root, d.selector))
    if d.kind is DetectorKind.TEXT:
        if d.subtree_of is None:
            return d.needle in subtree_text(snap.root)
        return any(d.needle in subtree_text(n) for n in query_selector(snap.root, d.subtree_of))
    return glob_to_regex(d.glob).fullmatch(snap.url) is not None


def match_detector_set(ds: DetectorSet, snap: PageSnapshot) -> MatchResult:
    score = 0
    failed = None
    for i, d in enumerate(ds.detectors):
        if match_detector(d, snap):
            score += 1
        elif d.required and failed is None:
            failed = i
    return MatchResult(matched=failed is None, score=score, required_failed=failed)


# --------------------------------------------------------------------------
# Serialization (embedded in .state files)
# --------------------------------------------------------------------------


def detector_to_dict(d: Detector) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": d.kind.value, "required": d.required}
    if d.kind is DetectorKind.ELEMENT:
        out["selector"] = str(d.selector)
    elif d.kind is DetectorKind.TEXT:
        out["needle"] = d.needle
        out["where"] = "anywhere" if d.subtree_of is None else {"subtree_of": str(d.subtree_of)}
    else:
        out["glob"] = d.glob
    return out


def detector_from_dict(data: Mapping[str, Any]) -> Detector:
    """Inverse of :func:`detector_to_dict`; raises ValueError on malformed input."""
    if not isinstance(data, Mapping):
        raise ValueError(f"detector must be an object, got {type(data).__name__}")
    kind = data.get("kind")
    required = data.get("required", True)
    if not isinstance(required, bool):
        raise ValueError("detector.required must be a boolean")
    if kind == "element":
        sel = data.get("selector")
        if not isinstance(sel, str):
            raise ValueError("element detector needs a selector string")
        return element(sel, required)
    if kind == "text":
        needle = data.get("needle")
        if not isinstance(needle, str):
            raise ValueError("text detector needs a needle string")
        where = data.get("where", "anywhere")
        if where == "anywhere":
            return text(needle, None, required)
        if isinstance(where, Mapping) and isinstance(where.get("subtree_of"), str):
            return text(needle, where["subtree_of"], required)
        raise ValueError(f"bad text detector scope: {where!r}")
    if kind == "url":
        glob = data.get("glob")
        if not isinstance(glob, str):
            raise ValueError("url detector needs a glob string")
        return url(glob, required)
    raise ValueError(f"unknown detector kind: {kind!r}")


def detector_set_to_list(ds: DetectorSet) -> list[dict[str, Any]]:
    return [detector_to_dict(d) for d in ds.detectors]


def detector_set_from_list(items: Sequence[Mapping[str, Any]]) -> DetectorSet:
    if not isinstance(items, Sequence) or isinstance(items, (str, bytes)):
        raise ValueError("detector set must be a list")
    return DetectorSet(tuple(detector_from_dict(d) for d in items))
