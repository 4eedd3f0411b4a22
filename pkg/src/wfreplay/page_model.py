"""Page snapshots, DOM trees and the minimal selector engine.

The selector grammar is intentionally small::

    selector := step (' '+ step)*
    step     := tag? ('#' id)? ('.' class)* ('[' name '=' value ']')*
    value    := token | '"' chars '"'

Steps are joined by the descendant combinator only. Child/sibling
combinators and pseudo-classes are rejected.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Iterator, Mapping, Sequence

__all__ = [
    "DomNode",
    "PageSnapshot",
    "SimpleSelector",
    "SelectorAst",
    "SelectorSyntaxError",
    "el",
    "index_tree",
    "iter_nodes",
    "subtree_text",
    "parse_selector",
    "query_selector",
    "dom_to_dict",
    "dom_from_dict",
    "dom_to_json",
    "dom_from_json",
    "set_attribute",
    "replace_node",
    "stable_selector",
]

_URL_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*://[^/?#\s]+(/[^?#\s]*)?(\?[^#\s]*)?(#\S*)?$")
_NAME_CHARS = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-")
_VALUE_STOP = frozenset(' \t\n\r\f[]="')


@dataclass(frozen=True)
class DomNode:
    tag: str
    id: str | None = None
    classes: tuple[str, ...] = ()
    attributes: Mapping[str, str] = field(default_factory=dict)
    text: str = ""
    children: tuple["DomNode", ...] = ()
    node_index: int = 0

    def __post_init__(self) -> None:
        if not self.tag:
            raise ValueError("DomNode.tag must be non-empty")
        if self.tag != self.tag.lower():
            object.__setattr__(self, "tag", self.tag.lower())
        classes = tuple(dict.fromkeys(self.classes))
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))
        object.__setattr__(self, "children", tuple(self.children))

    def __hash__(self) -> int:
        return hash((self.tag, self.id, self.node_index))

    def get(self, name: str, default: str | None = None) -> str | None:
        return self.attributes.get(name, default)


def el(
    tag: str,
    *children: DomNode,
    id: str | None = None,
    classes: Sequence[str] | str = (),
    text: str = "",
    attrs: Mapping[str, str] | None = None,
) -> DomNode:
    """Shorthand constructor for hand-written trees (indices assigned later)."""
    if isinstance(classes, str):
        classes = classes.split()
    return DomNode(tag, id, tuple(classes), dict(attrs or {}), text, tuple(children))


def index_tree(root: DomNode) -> DomNode:
    """Return a copy of ``root`` with node_index assigned in pre-order."""
    counter = 0

    def walk(node: DomNode) -> DomNode:
        nonlocal counter
        idx = counter
        counter += 1
        kids = tuple(walk(c) for c in node.children)
        if idx == node.node_index and all(a is b for a, b in zip(kids, node.children)):
            return node
        return replace(node, children=kids, node_index=idx)

    return walk(root)


def iter_nodes(root: DomNode) -> Iterator[DomNode]:
    """Pre-order (document order) traversal."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def subtree_text(node: DomNode) -> str:
    """Own text of every node in the subtree, concatenated in document order."""
    return "".join(n.text for n in iter_nodes(node))


@dataclass(frozen=True)
class PageSnapshot:
    url: str
    title: str
    root: DomNode
    captured_at: int = 0
    env_revision: int = 0
    attachment: str | None = None  # opaque screenshot reference, never interpreted

    def __post_init__(self) -> None:
        if not _URL_RE.match(self.url):
            raise ValueError(f"not an absolute URL: {self.url!r}")

    def content_equal(self, other: PageSnapshot) -> bool:
        """Equality ignoring ``captured_at``."""
        return replace(self, captured_at=0) == replace(other, captured_at=0)


# --------------------------------------------------------------------------
# Selectors
# --------------------------------------------------------------------------


class SelectorSyntaxError(ValueError):
    """Raised for selector text outside the grammar; ``offset`` is a byte offset."""

    def __init__(self, message: str, selector: str, pos: int) -> None:
        self.selector = selector
        self.offset = len(selector[:pos].encode("utf-8"))
        super().__init__(f"{message} at offset {self.offset} in {selector!r}")


@dataclass(frozen=True)
class SimpleSelector:
    tag: str | None = None
    id: str | None = None
    classes: tuple[str, ...] = ()
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not (self.tag or self.id or self.classes or self.attributes):
            raise ValueError("empty selector step")

    def matches(self, node: DomNode) -> bool:
        if self.tag is not None and node.tag != self.tag:
            return False
        if self.id is not None and node.id != self.id:
            return False
        if self.classes and not set(self.classes).issubset(node.classes):
            return False
        for name, value in self.attributes:
            if node.attributes.get(name) != value:
                return False
        return True

    def __str__(self) -> str:
        out = [self.tag or ""]
        if self.id is not None:
            out.append("#" + self.id)
        out.extend("." + c for c in self.classes)
        for name, value in self.attributes:
            out.append(f"[{name}={_quote_value(value)}]")
        return "".join(out)


@dataclass(frozen=True)
class SelectorAst:
    steps: tuple[SimpleSelector, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("selector needs at least one step")

    def __str__(self) -> str:
        return " ".join(str(s) for s in self.steps)


def _quote_value(value: str) -> str:
    if value and not any(ch in _VALUE_STOP or ch == "\\" for ch in value):
        return value
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


class _SelectorParser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def error(self, message: str, pos: int | None = None) -> SelectorSyntaxError:
        return SelectorSyntaxError(message, self.text, self.pos if pos is None else pos)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def name(self, what: str) -> str:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _NAME_CHARS:
            self.pos += 1
        if start == self.pos:
            raise self.error(f"expected {what}")
        return self.text[start : self.pos]

    def value(self) -> str:
        if self.peek() == '"':
            self.pos += 1
            out: list[str] = []
            while True:
                ch = self.peek()
                if not ch:
                    raise self.error("unterminated string")
                self.pos += 1
                if ch == '"':
                    return "".join(out)
                if ch == "\\":
                    nxt = self.peek()
                    if not nxt:
                        raise self.error("dangling escape")
                    out.append(nxt)
                    self.pos += 1
                else:
                    out.append(ch)
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in _VALUE_STOP:
            self.pos += 1
        if start == self.pos:
            raise self.error("expected attribute value")
        return self.text[start : self.pos]

    def step(self) -> SimpleSelector:
        start = self.pos
        tag = None
        ident = None
        classes: list[str] = []
        attrs: list[tuple[str, str]] = []
        if self.peek() and self.peek() in _NAME_CHARS:
            tag = self.name("tag").lower()
        while True:
            ch = self.peek()
            if ch == "#":
                if ident is not None:
                    raise self.error("duplicate id")
                self.pos += 1
                ident = self.name("id")
            elif ch == ".":
                self.pos += 1
                classes.append(self.name("class"))
            elif ch == "[":
                self.pos += 1
                attr = self.name("attribute name")
                if self.peek() != "=":
                    raise self.error("expected '='")
                self.pos += 1
                val = self.value()
                if self.peek() != "]":
                    raise self.error("expected ']'")
                self.pos += 1
                attrs.append((attr, val))
            else:
                break
        if self.pos == start:
            raise self.error(f"unexpected {self.peek()!r}" if self.peek() else "expected selector step")
        return SimpleSelector(tag, ident, tuple(classes), tuple(attrs))

    def parse(self) -> SelectorAst:
        n = len(self.text)
        while self.pos < n and self.text[self.pos].isspace():
            self.pos += 1
        if self.pos == n:
            raise self.error("empty selector")
        steps = [self.step()]
        while self.pos < n:
            if not self.text[self.pos].isspace():
                raise self.error(f"unexpected {self.text[self.pos]!r}")
            while self.pos < n and self.text[self.pos].isspace():
                self.pos += 1
            if self.pos < n:
                steps.append(self.step())
        return SelectorAst(tuple(steps))


def parse_selector(text: str | SelectorAst) -> SelectorAst:
    if isinstance(text, SelectorAst):
        return text
    return _SelectorParser(text).parse()


def query_selector(root: DomNode, sel: SelectorAst | str) -> list[DomNode]:
    """All nodes under (and including) ``root`` matching ``sel``, in document order.

    With descendant-only combinators, matching ancestors greedily from the
    top of the chain is optimal, so one pass suffices.
    """
    sel = parse_selector(sel)
    steps = sel.steps
    last = len(steps) - 1
    out: list[DomNode] = []
    stack: list[tuple[DomNode, int]] = [(root, 0)]
    while stack:
        node, matched = stack.pop()
        if matched == last and steps[last].matches(node):
            out.append(node)
        if matched < last and steps[matched].matches(node):
            matched += 1
        for child in reversed(node.children):
            stack.append((child, matched))
    return out


# --------------------------------------------------------------------------
# Canonical serialization
# --------------------------------------------------------------------------


def dom_to_dict(node: DomNode) -> dict[str, Any]:
    return {
        "tag": node.tag,
        "id": node.id,
        "classes": list(node.classes),
        "attributes": {k: node.attributes[k] for k in sorted(node.attributes)},
        "text": node.text,
        "children": [dom_to_dict(c) for c in node.children],
    }


def dom_from_dict(data: Mapping[str, Any]) -> DomNode:
    def build(d: Mapping[str, Any]) -> DomNode:
        return DomNode(
            tag=d["tag"],
            id=d.get("id"),
            classes=tuple(d.get("classes", ())),
            attributes=dict(d.get("attributes", {})),
            text=d.get("text", ""),
            children=tuple(build(c) for c in d.get("children", ())),
        )

    return index_tree(build(data))


def dom_to_json(node: DomNode) -> str:
    return json.dumps(dom_to_dict(node), ensure_ascii=False, separators=(",", ":"))


def dom_from_json(text: str) -> DomNode:
    return dom_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# Functional tree edits
# --------------------------------------------------------------------------


def replace_node(root: DomNode, node_index: int, new: DomNode) -> DomNode:
    """Return a tree with the node at ``node_index`` swapped for ``new``, reindexed."""

    def walk(node: DomNode) -> DomNode:
        if node.node_index == node_index:
            return new
        kids = node.children
        for i, child in enumerate(kids):
            nxt = kids[i + 1].node_index if i + 1 < len(kids) else None
            if child.node_index <= node_index and (nxt is None or node_index < nxt):
                return replace(node, children=kids[:i] + (walk(child),) + kids[i + 1 :])
        return node

    return index_tree(walk(root))


def set_attribute(root: DomNode, node_index: int, name: str, value: str) -> DomNode:
    target = next(n for n in iter_nodes(root) if n.node_index == node_index)
    attrs = dict(target.attributes)
    attrs[name] = value
    return replace_node(root, node_index, replace(target, attributes=attrs))


_STABLE_ATTRS = ("name", "type", "aria-label", "role", "data-testid", "href")
_SKIP_DATA_ATTRS = ("data-mark", "data-testid")  # marks are volatile; testid is already above


def stable_selector(root: DomNode, node: DomNode) -> SelectorAst:
    """Build a selector whose first match in ``root`` is ``node``.

    Preference order: unique id, then tag/class/attribute combinations of the
    node, then the same qualified by ancestors. Mark attributes are never used
    since they are not stable across observations.
    """

    def first_is(sel: SelectorAst) -> bool:
        hits = query_selector(root, sel)
        return bool(hits) and hits[0].node_index == node.node_index

    def only_is(sel: SelectorAst) -> bool:
        hits = query_selector(root, sel)
        return len(hits) == 1 and hits[0].node_index == node.node_index

    if node.id:
        sel = SelectorAst((SimpleSelector(id=node.id),))
        if first_is(sel):
            return sel

    attrs = tuple((a, node.attributes[a]) for a in _STABLE_ATTRS if a in node.attributes)
    data = tuple(
        (a, v) for a, v in sorted(node.attributes.items()) if a.startswith("data-") and a not in _SKIP_DATA_ATTRS
    )
    candidates = [
        SimpleSelector(tag=node.tag),
        SimpleSelector(tag=node.tag, classes=node.classes),
        SimpleSelector(tag=node.tag, classes=node.classes, attributes=attrs),
        SimpleSelector(tag=node.tag, classes=node.classes, attributes=attrs + data),
    ]
    # Prefer a selector that matches only this node; fall back to first-match.
    for accept in (only_is, first_is):
        for cand in candidates:
            if accept(SelectorAst((cand,))):
                return SelectorAst((cand,))

    ancestors = _ancestors(root, node)
    own = candidates[2]
    chain: list[SimpleSelector] = [own]
    for anc in reversed(ancestors):
        if anc.id:
            step = SimpleSelector(id=anc.id)
        else:
            step = SimpleSelector(tag=anc.tag, classes=anc.classes)
        chain.insert(0, step)
        sel = SelectorAst(tuple(chain))
        if first_is(sel):
            return sel
        if anc.id and first_is(SelectorAst((step, own))):
            return SelectorAst((step, own))
    raise ValueError(f"no selector in the grammar singles out node {node.node_index}")


def _ancestors(root: DomNode, node: DomNode) -> list[DomNode]:
    path: list[DomNode] = []

    def walk(cur: DomNode) -> bool:
        if cur.node_index == node.node_index:
            return True
        path.append(cur)
        for child in cur.children:
            if walk(child):
                return True
        path.pop()
        return False

    walk(root)
    return path
