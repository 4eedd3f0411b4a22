from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_detector_set, brute_glob, random_detector_set, random_tree, random_url
from wfreplay.detectors import (
    DetectorSet,
    detector_from_dict,
    detector_set_from_list,
    detector_set_to_list,
    detector_to_dict,
    element,
    glob_to_regex,
    match_detector,
    match_detector_set,
    text,
    url,
)
from wfreplay.page_model import PageSnapshot, el, index_tree


def _snap(u="https://www.disneyplus.com/login"):
    root = index_tree(
        el(
            "html",
            el("form", el("input", id="email"), el("button", id="login-btn", text="Log "), el("span", text="In"), id="f"),
            el("footer", text="Help"),
        )
    )
    return PageSnapshot(u, "Log In", root)


def test_element_text_and_url_kinds():
    snap = _snap()
    assert match_detector(element("#login-btn"), snap)
    assert not match_detector(element("#logout"), snap)
    assert match_detector(text("Log In"), snap)  # spans sibling nodes, joined without separator
    assert match_detector(text("Log In", subtree_of="form#f"), snap)
    assert not match_detector(text("Help", subtree_of="form"), snap)
    assert match_detector(url("*/login"), snap)
    assert not match_detector(url("*/home"), snap)


def test_text_is_case_sensitive():
    assert not match_detector(text("log in"), _snap())


@pytest.mark.parametrize(
    "glob,target,expected",
    [
        ("https://*/login", "https://a.test/x/login", True),  # * crosses slashes
        ("https://a.test/?", "https://a.test/x", True),
        ("https://a.test/?", "https://a.test/xy", False),
        ("https://a.test/[x]", "https://a.test/[x]", True),  # brackets are literal
        ("https://a.test/x.y", "https://a.test/xzy", False),  # dots are literal
        ("*", "", True),
    ],
)
def test_glob_semantics(glob, target, expected):
    assert (glob_to_regex(glob).fullmatch(target) is not None) is expected
    assert brute_glob(glob, target) is expected


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="ab*?/.", max_size=8), st.text(alphabet="ab/.", max_size=8))
def test_glob_agrees_with_recursive_matcher(glob, target):
    assert (glob_to_regex(glob).fullmatch(target) is not None) == brute_glob(glob, target)


def test_set_semantics_and_score():
    snap = _snap()
    ds = DetectorSet((url("*/login"), element("#login-btn"), text("Nope", required=False)))
    res = match_detector_set(ds, snap)
    assert res.matched and res.score == 2 and res.required_failed is None
    ds2 = DetectorSet((url("*/login"), element("#missing"), text("Help", required=False)))
    res2 = match_detector_set(ds2, snap)
    assert not res2.matched and res2.required_failed == 1 and res2.score == 2


def test_set_needs_a_required_detector():
    with pytest.raises(ValueError):
        DetectorSet(())
    with pytest.raises(ValueError):
        DetectorSet((url("*", required=False),))


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_detector_sets_agree_with_brute_force(seed):
    rng = random.Random(seed)
    snap = PageSnapshot(random_url(rng), "t", random_tree(rng))
    ds = random_detector_set(rng)
    res = match_detector_set(ds, snap)
    assert (res.matched, res.score) == brute_detector_set(ds, snap)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32))
def test_serialization_round_trip(seed):
    ds = random_detector_set(random.Random(seed))
    assert detector_set_from_list(detector_set_to_list(ds)) == ds


@pytest.mark.parametrize(
    "bad",
    [
        {"kind": "pixel"},
        {"kind": "element"},
        {"kind": "element", "selector": "div >>"},
        {"kind": "text", "needle": ""},
        {"kind": "text", "needle": "x", "where": "somewhere"},
        {"kind": "url", "glob": 3},
        {"kind": "url", "glob": "*", "required": "yes"},
        "not a mapping",
    ],
)
def test_malformed_detectors_are_rejected(bad):
    with pytest.raises(ValueError):
        detector_from_dict(bad)


def test_text_scope_serializes_as_subtree_of():
    d = text("Log In", subtree_of="form#f")
    assert detector_to_dict(d) == {"kind": "text", "required": True, "needle": "Log In", "where": {"subtree_of": "form#f"}}
