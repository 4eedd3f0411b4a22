from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_query, random_selector, random_tree
from wfreplay.page_model import (
    DomNode,
    PageSnapshot,
    SelectorSyntaxError,
    dom_from_json,
    dom_to_json,
    el,
    index_tree,
    iter_nodes,
    parse_selector,
    query_selector,
    replace_node,
    set_attribute,
    stable_selector,
    subtree_text,
)


def _page():
    return index_tree(
        el(
            "html",
            el("body", el("div", el("button", text="A", classes="btn"), el("button", text="B", id="b"), classes="row")),
        )
    )


def test_parse_and_print_round_trip():
    for text in ("div", "#login-btn", "button.btn.btn-primary", 'a[aria-label="Sign in"]', "form#f input[name=email]"):
        ast = parse_selector(text)
        assert parse_selector(str(ast)) == ast


def test_tag_names_are_lowercased():
    assert parse_selector("DIV").steps[0].tag == "div"


@pytest.mark.parametrize(
    "text,offset",
    [("div >>", 4), ("", 0), ("a:hover", 1), ("[x]", 2), ('a[x="unterminated', 17), ("#a#b", 2)],
)
def test_syntax_errors_report_byte_offset(text, offset):
    with pytest.raises(SelectorSyntaxError) as info:
        parse_selector(text)
    assert info.value.offset == offset


def test_offset_counts_bytes_not_characters():
    with pytest.raises(SelectorSyntaxError) as info:
        parse_selector('a[t="é"] >')
    assert info.value.offset == len('a[t="é"] '.encode())


def test_query_returns_document_order():
    root = _page()
    hits = query_selector(root, "button")
    assert [n.text for n in hits] == ["A", "B"]
    assert [n.node_index for n in hits] == sorted(n.node_index for n in hits)


def test_descendant_needs_real_ancestor():
    root = _page()
    assert [n.text for n in query_selector(root, "div.row button")] == ["A", "B"]
    assert query_selector(root, "button div") == []
    assert [n.text for n in query_selector(root, "html body #b")] == ["B"]


def test_descendant_chain_is_not_greedy_trap():
    # div > div > span: "div div span" must match through either div pairing.
    root = index_tree(el("div", el("div", el("span", text="x"), classes="inner"), classes="outer"))
    assert len(query_selector(root, "div.outer span")) == 1
    assert len(query_selector(root, "div div span")) == 1
    assert len(query_selector(root, "div.inner div span")) == 0


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_query_agrees_with_exhaustive_search(seed):
    rng = random.Random(seed)
    root = random_tree(rng)
    sel = random_selector(rng)
    assert [n.node_index for n in query_selector(root, sel)] == brute_query(root, sel)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_serialization_round_trip(seed):
    root = random_tree(random.Random(seed))
    again = dom_from_json(dom_to_json(root))
    assert again == root
    assert dom_to_json(again) == dom_to_json(root)


def test_serialization_is_canonical_for_attribute_order():
    a = DomNode("input", attributes={"type": "text", "name": "q"})
    b = DomNode("input", attributes={"name": "q", "type": "text"})
    assert dom_to_json(a) == dom_to_json(b)


def test_index_tree_is_preorder():
    root = _page()
    assert [n.node_index for n in iter_nodes(root)] == list(range(len(list(iter_nodes(root)))))


def test_subtree_text_concatenates_without_separator():
    assert subtree_text(_page()) == "AB"


def test_snapshot_requires_absolute_url():
    with pytest.raises(ValueError):
        PageSnapshot("/relative", "t", _page())
    snap = PageSnapshot("https://a.test/x", "t", _page(), captured_at=5)
    assert snap.content_equal(PageSnapshot("https://a.test/x", "t", _page(), captured_at=9))


def test_set_attribute_and_replace_node_keep_indices():
    root = _page()
    target = query_selector(root, "#b")[0]
    root2 = set_attribute(root, target.node_index, "disabled", "true")
    assert query_selector(root2, "button[disabled=true]")[0].node_index == target.node_index
    root3 = replace_node(root2, target.node_index, el("span", text="gone"))
    assert query_selector(root3, "#b") == []
    assert [n.node_index for n in iter_nodes(root3)] == list(range(len(list(iter_nodes(root3)))))


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_stable_selector_first_match_is_the_node(seed):
    rng = random.Random(seed)
    root = random_tree(rng)
    for node in iter_nodes(root):
        try:
            sel = stable_selector(root, node)
        except ValueError:
            continue
        assert query_selector(root, sel)[0].node_index == node.node_index
        assert "data-mark" not in str(sel)


def test_stable_selector_prefers_ids_and_ignores_marks():
    root = index_tree(el("div", el("button", id="go", attrs={"data-mark": "1"}), el("button", attrs={"data-mark": "2", "name": "b"})))
    first, second = query_selector(root, "button")
    assert str(stable_selector(root, first)) == "#go"
    assert "data-mark" not in str(stable_selector(root, second))


def test_stable_selector_rejects_indistinguishable_nodes():
    root = index_tree(el("div", el("button"), el("button")))
    with pytest.raises(ValueError):
        stable_selector(root, query_selector(root, "button")[1])
