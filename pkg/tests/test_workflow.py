from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfreplay.scenarios import espn10_workflow, espn_workflow, fixture_path
from wfreplay.workflow import (
    AbstractState,
    AbstractWorkflow,
    ParseError,
    ValidationError,
    parse_workflow,
    resolve_placeholders,
    serialize_workflow,
)

DOC = """\
workflow: demo
app: demo-app
entry: https://app.test/login
max_steps: 12

# comments and blank lines are ignored
[state] login
trigger: the login form is shown
action: type ${USER} into the email field, \\
    then press Log In

[state] done
trigger: the dashboard is visible
end: true
hint.progress_selector: video#player
hint.progress_attribute: currenttime
"""


def test_parse_reads_header_states_and_hints():
    w = parse_workflow(DOC)
    assert (w.workflow_id, w.app_label, w.entry_url, w.max_steps) == ("demo", "demo-app", "https://app.test/login", 12)
    assert [s.name for s in w.states] == ["login", "done"]
    assert w.state("login").action_prose == "type ${USER} into the email field, then press Log In"
    assert w.state("done").is_end and w.end_states == (w.state("done"),)
    assert w.state("done").progress_clause == ("video#player", "currenttime")
    assert [s.declaration_index for s in w.states] == [0, 1]


def test_bundled_workflows_parse():
    for name in ("espn.workflow", "espn10.workflow", "espn_ended.workflow"):
        w = parse_workflow(fixture_path(name).read_bytes())
        assert w.end_states


def test_duplicate_state_is_located():
    doc = DOC + "\n[state]   login\ntrigger: again\naction: again\n"
    with pytest.raises(ValidationError) as info:
        parse_workflow(doc)
    lines = doc.splitlines()
    line = next(i for i, text in enumerate(lines, 1) if text.startswith("[state]   login"))
    assert info.value.line == line
    assert info.value.col == len("[state]   ") + 1
    assert "duplicate" in info.value.message


@pytest.mark.parametrize(
    "doc",
    [
        "",
        "workflow: x\napp: y\n",
        "workflow: x\napp: y\nentry: https://a.test/\n",  # no states
        "workflow: x\napp: y\nentry: https://a.test/\n[state] a\ntrigger: t\n",  # no action, not end
        "workflow: x\napp: y\nentry: https://a.test/\n[state] a\ntrigger: t\naction: go\n",  # no end state
        "workflow: x\napp: y\nentry: /relative\n[state] a\ntrigger: t\nend: true\n",
        "workflow: x\napp: y\nentry: https://a.test/\n[state] Bad-Name\ntrigger: t\nend: true\n",
        "workflow: x\napp: y\nentry: https://a.test/\n[state] a\ntrigger: t\nend: maybe\n",
        "workflow: x\napp: y\nentry: https://a.test/\nbogus: 1\n",
        "workflow: x\napp: y\nentry: https://a.test/\n[state] a\ntrigger: t \\\n",
    ],
)
def test_invalid_documents_are_rejected_with_location(doc):
    with pytest.raises((ParseError, ValidationError)) as info:
        parse_workflow(doc)
    assert info.value.line is not None and info.value.line >= 1


def test_serialize_round_trip_on_fixtures():
    for w in (espn_workflow(), espn10_workflow()):
        assert parse_workflow(serialize_workflow(w)) == w


_prose = st.lists(
    st.text(alphabet="abcdefghijklmnopqrstuvwxyz${}_.,'", min_size=1, max_size=12), min_size=1, max_size=25
).map(" ".join)


@settings(max_examples=150, deadline=None)
@given(trigger=_prose, action=_prose, hint=_prose)
def test_serialize_round_trip_with_long_prose(trigger, action, hint):
    w = AbstractWorkflow(
        "wf",
        "app",
        "https://a.test/start",
        (
            AbstractState("first", trigger, action, declaration_index=0),
            AbstractState("last", trigger, is_end=True, hints={"note": hint}, declaration_index=1),
        ),
    )
    text = serialize_workflow(w)
    assert all(len(line) <= 88 or " " not in line.strip() for line in text.splitlines())
    assert parse_workflow(text) == w


def test_resolve_placeholders():
    assert resolve_placeholders("user ${A} and ${B}", {"A": "x", "B": "y"}) == "user x and y"
    with pytest.raises(KeyError):
        resolve_placeholders("${MISSING}", {})
