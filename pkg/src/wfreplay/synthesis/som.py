"""Set-of-Mark numbering of interactable elements and the textual page view."""

from __future__ import annotations

from dataclasses import replace

from ..page_model import DomNode, PageSnapshot, iter_nodes

__all__ = ["MARK_ATTR", "INTERACTABLE_TAGS", "is_interactable", "assign_som_marks", "marked_nodes", "render_outline"]

MARK_ATTR = "data-mark"
INTERACTABLE_TAGS = frozenset({"a", "button", "input", "select", "textarea"})


def is_interactable(node: DomNode) -> bool:
    return node.tag in INTERACTABLE_TAGS or node.get("role") == "button" or "onclick" in node.attributes


def assign_som_marks(snap: PageSnapshot) -> PageSnapshot:
    """Number interactables 1..N in document order; other nodes are left as they are."""
    counter = 0

    def walk(node: DomNode) -> DomNode:
        nonlocal counter
        attrs = None
        if is_interactable(node):
            counter += 1
            if node.get(MARK_ATTR) != str(counter):
                attrs = dict(node.attributes)
                attrs[MARK_ATTR] = str(counter)
        kids = tuple(walk(c) for c in node.children)
        changed_kids = any(a is not b for a, b in zip(kids, node.children))
        if attrs is None and not changed_kids:
            return node
        return replace(node, attributes=attrs if attrs is not None else node.attributes, children=kids)

    return replace(snap, root=walk(snap.root))


def marked_nodes(snap: PageSnapshot) -> dict[int, DomNode]:
    out = {}
    for node in iter_nodes(snap.root):
        mark = node.get(MARK_ATTR)
        if mark is not None and is_interactable(node) and mark.isdigit():
            out[int(mark)] = node
    return out


def render_outline(snap: PageSnapshot, max_text: int = 80) -> str:
    """Indented one-line-per-element view of a (marked) snapshot for model context."""
    lines = [f"URL: {snap.url}", f"Title: {snap.title}"]

    def walk(node: DomNode, depth: int) -> None:
        mark = node.get(MARK_ATTR)
        head = f"[{mark}] " if mark is not None and is_interactable(node) else ""
        desc = node.tag
        if node.id:
            desc += f"#{node.id}"
        desc += "".join(f".{c}" for c in node.classes)
        attrs = " ".join(f'{k}="{v}"' for k, v in sorted(node.attributes.items()) if k != MARK_ATTR)
        line = "  " * depth + head + "<" + desc + (" " + attrs if attrs else "") + ">"
        if node.text.strip():
            text = node.text.strip()
            if len(text) > max_text:
                text = text[: max_text - 3] + "..."
            line += f' "{text}"'
        lines.append(line)
        for child in node.children:
            walk(child, depth + 1)

    walk(snap.root, 0)
    return "\n".join(lines)
