from __future__ import annotations

import json
import random
import threading
from dataclasses import replace
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_tree
from wfreplay.actions import ActionProgram, Click, TypeText
from wfreplay.detectors import DetectorSet, detector_set_to_list, element, text, url
from wfreplay.page_model import PageSnapshot, el, index_tree, iter_nodes, parse_selector
from wfreplay.repo import TokenUsage
from wfreplay.scenarios import ESPN10_STATE_TOKENS, espn_book
from wfreplay.sim import SimEnvironment, build_espnlike_app
from wfreplay.synthesis import (
    BackendError,
    BudgetExceeded,
    ChatBackend,
    ChatConfig,
    CostModel,
    DetectorRejected,
    MalformedOutput,
    OracleBackend,
    ProgramRejected,
    SelectionError,
    SynthesisRequest,
    assign_som_marks,
    chat_backend,
    cost,
    dollars,
    marked_nodes,
    render_outline,
    split_tokens,
    synthesize,
)
from wfreplay.synthesis.chat import extract_json
from wfreplay.synthesis.oracle import END_STEP_SHARES, STEP_SHARES

S = parse_selector


def _login_snapshot() -> PageSnapshot:
    return SimEnvironment(build_espnlike_app(), 0).observe()


def _playback_snapshot() -> PageSnapshot:
    return SimEnvironment(build_espnlike_app(), 0, start_page="playback").observe()


# -- Set-of-Mark -----------------------------------------------------------


def test_marks_follow_document_order():
    root = index_tree(el("div", el("button", text="a"), el("p", el("button", text="b")), el("button", text="c")))
    marked = assign_som_marks(PageSnapshot("https://a.test/", "", root))
    buttons = [n for n in iter_nodes(marked.root) if n.tag == "button"]
    assert [n.get("data-mark") for n in buttons] == ["1", "2", "3"]
    assert [n.node_index for n in buttons] == sorted(n.node_index for n in buttons)
    assert all(n.get("data-mark") is None for n in iter_nodes(marked.root) if n.tag != "button")


def test_role_and_onclick_count_as_interactable():
    root = index_tree(el("div", el("span", attrs={"role": "button"}), el("div", attrs={"onclick": "go()"}), el("p")))
    marks = marked_nodes(assign_som_marks(PageSnapshot("https://a.test/", "", root)))
    assert [n.tag for _, n in sorted(marks.items())] == ["span", "div"]


def test_no_interactables_leaves_snapshot_unchanged():
    snap = PageSnapshot("https://a.test/", "", index_tree(el("div", el("p", text="x"))))
    assert assign_som_marks(snap) == snap


def test_remarking_replaces_stale_marks():
    root = index_tree(el("div", el("button", attrs={"data-mark": "7"}), el("a")))
    marked = assign_som_marks(PageSnapshot("https://a.test/", "", root))
    assert sorted(marked_nodes(marked)) == [1, 2]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_marking_is_idempotent(seed):
    snap = PageSnapshot("https://a.test/", "", random_tree(random.Random(seed)))
    once = assign_som_marks(snap)
    assert assign_som_marks(once) == once


def test_outline_shows_marks_and_text():
    out = render_outline(assign_som_marks(_login_snapshot()))
    assert "URL: https://www.disneyplus.com/login" in out
    assert '[3] <button#login-btn.btn.btn-primary type="submit"> "Log In"' in out


# -- oracle pipeline -------------------------------------------------------


def test_oracle_synthesizes_login(espn_wf, espn_oracle):
    res = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), espn_oracle)
    assert res.selected_state == "login"
    ds = res.concrete.detector_sets[0]
    assert {d.kind.value for d in ds.detectors} >= {"url", "text"}
    assert res.concrete.program == ActionProgram(
        (
            TypeText(S("#email"), "${ESPN_USER}"),
            TypeText(S("#password"), "${ESPN_PASSWORD}", secret=True),
            Click(S("#login-btn")),
        )
    )
    assert [r.step for r in res.steps_log] == ["observe", "select", "generate", "decompose"]
    assert res.usage == TokenUsage.sum(r.usage for r in res.steps_log)
    assert res.concrete.synthesis_tokens == res.usage


def test_oracle_charges_configured_cost(espn_wf):
    backend = OracleBackend(espn_book(), tokens_per_state=ESPN10_STATE_TOKENS)
    res = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert res.usage.total == 42_600


def test_oracle_is_deterministic(espn_wf, espn_oracle):
    req = SynthesisRequest(espn_wf, _login_snapshot())
    assert synthesize(req, espn_oracle) == synthesize(req, espn_oracle)


def test_end_state_has_no_program(espn_wf, espn_oracle):
    res = synthesize(SynthesisRequest(espn_wf, _playback_snapshot()), espn_oracle)
    assert res.selected_state == "playback" and res.concrete.program is None
    assert [r.step for r in res.steps_log] == ["observe", "select", "generate"]


def test_target_state_is_enforced(espn_wf, espn_oracle):
    with pytest.raises(ValueError):
        SynthesisRequest(espn_wf, _login_snapshot(), target_state="nope")
    with pytest.raises(ValueError):
        SynthesisRequest(replace(espn_wf, max_steps=1), _login_snapshot(), history=("login", "login"))


def test_budget_cap(espn_wf):
    with pytest.raises(BudgetExceeded) as info:
        synthesize(SynthesisRequest(espn_wf, _login_snapshot()), OracleBackend(espn_book(), tokens_per_state=400_000))
    assert info.value.usage.total > 150_000
    res = synthesize(
        SynthesisRequest(espn_wf, _login_snapshot()),
        OracleBackend(espn_book(), tokens_per_state=400_000),
        token_budget=400_000,
    )
    assert res.usage.total == 400_000


class _Scripted:
    """Backend whose step replies come from fixed lists (one item per attempt)."""

    def __init__(self, select=("login",), generate=(), decompose=(), usage=TokenUsage(3, 2)):
        self.replies = {"select": list(select), "generate": list(generate), "decompose": list(decompose)}
        self.usage = usage
        self.feedback: list[str | None] = []

    def observe(self, req, marked):
        return {}, self.usage

    def _next(self, step, feedback):
        self.feedback.append(feedback)
        reply = self.replies[step].pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply, self.usage

    def select(self, req, context, feedback):
        return self._next("select", feedback)

    def generate(self, req, context, state, feedback):
        return self._next("generate", feedback)

    def decompose(self, req, context, state, feedback):
        return self._next("decompose", feedback)


GOOD_SETS = [detector_set_to_list(DetectorSet((url("*/login"), text("Log In"))))]
GOOD_PROGRAM = {"version": 1, "instructions": [{"op": "click", "selector": "#login-btn"}]}


def test_unknown_state_name_is_a_selection_error(espn_wf):
    backend = _Scripted(select=("logout", "logout"))
    with pytest.raises(SelectionError) as info:
        synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert "logout" in str(info.value)
    assert backend.feedback[0] is None and "logout" in backend.feedback[1]
    assert info.value.usage == TokenUsage(9, 6)


def test_selection_retry_recovers(espn_wf):
    backend = _Scripted(select=("logout", "login"), generate=(GOOD_SETS,), decompose=(GOOD_PROGRAM,))
    res = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert res.selected_state == "login"
    assert res.usage == TokenUsage(3 * 5, 2 * 5)


def test_detectors_that_miss_the_page_are_rejected_twice(espn_wf):
    wrong = [detector_set_to_list(DetectorSet((url("*/home"),)))]
    marks = [detector_set_to_list(DetectorSet((element("button[data-mark=3]"),)))]
    backend = _Scripted(generate=(wrong, marks))
    with pytest.raises(DetectorRejected):
        synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert "does not match" in backend.feedback[2]


def test_malformed_program_is_rejected(espn_wf):
    bad = {"version": 1, "instructions": [{"op": "fly"}]}
    backend = _Scripted(generate=(GOOD_SETS,), decompose=(bad, MalformedOutput("garbled", TokenUsage(1, 1))))
    with pytest.raises(ProgramRejected) as info:
        synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert info.value.usage == TokenUsage(3 * 4 + 1, 2 * 4 + 1)


def test_backend_error_carries_accumulated_usage(espn_wf):
    backend = _Scripted(generate=(BackendError("down", TokenUsage(0, 0), status=503),))
    with pytest.raises(BackendError) as info:
        synthesize(SynthesisRequest(espn_wf, _login_snapshot()), backend)
    assert info.value.status == 503 and info.value.usage == TokenUsage(6, 4)


# -- token split and cost ----------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([STEP_SHARES, END_STEP_SHARES]))
def test_split_is_exact(total, shares):
    parts = split_tokens(total, shares)
    assert list(parts) == list(shares)
    assert sum(u.total for u in parts.values()) == total
    for name, u in list(parts.items())[:-1]:
        assert u.total == total * shares[name] // 100
        assert u.input_tokens == u.total * 4 // 5


def test_split_rejects_bad_shares():
    with pytest.raises(ValueError):
        split_tokens(10, {"a": 50})
    with pytest.raises(ValueError):
        split_tokens(-1, STEP_SHARES)


def test_cost_examples():
    assert cost(TokenUsage()) == 0
    assert cost(TokenUsage(278_700, 0)).quantize(Decimal("0.0001")) == Decimal("0.0975")
    assert abs(cost(TokenUsage(278_700, 0)) - Decimal("0.098")) <= Decimal("0.001")
    assert cost(TokenUsage(426_000, 0)) == Decimal("0.1491")
    split = CostModel.split("1", "4")
    assert cost(TokenUsage(1_000_000, 500_000), split) == Decimal("3")
    with pytest.raises(ValueError):
        CostModel.blended("-0.1")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**8), st.integers(0, 10**8), st.integers(0, 10**8), st.integers(0, 10**8))
def test_cost_is_linear_and_monotone(a, b, c, d):
    m = CostModel.split("0.2", "0.6")
    u, v = TokenUsage(a, b), TokenUsage(c, d)
    assert cost(u + v, m) == cost(u, m) + cost(v, m)
    assert cost(u + v) >= cost(u)
    assert dollars(a, "0.35") == Decimal(a) * Decimal("0.35") / 1_000_000


# -- chat backend against a fake server ----------------------------------------


class FakeChat:
    def __init__(self, replies: dict[str, list], status: int = 200):
        self.replies = replies
        self.status = status
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        fake = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                fake.requests.append(body)
                fake.headers.append(dict(self.headers))
                if fake.status != 200:
                    payload = b'{"error": "rate limited, retry later"}'
                    self.send_response(fake.status)
                else:
                    prompt = body["messages"][-1]["content"]
                    step = "select" if '{"state"' in prompt else "generate" if "detector_sets" in prompt else "decompose"
                    text, usage = fake.replies[step].pop(0)
                    payload = json.dumps({"output_text": text, "usage": usage}).encode()
                    self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def _chat(url: str) -> ChatBackend:
    return ChatBackend(ChatConfig(url, "test-key", model="m1"))


LOGIN_REPLIES = {
    "select": [('Sure. {"state": "login"}', {"input_tokens": 900, "output_tokens": 12})],
    "generate": [
        (
            "```json\n" + json.dumps({"detector_sets": [json.loads(json.dumps(espn_book()["states"]["login"]["recognize"]))]}) + "\n```",
            {"prompt_tokens": 1000, "completion_tokens": 80},
        )
    ],
    "decompose": [
        (
            json.dumps(
                {
                    "instructions": [
                        {"op": "type_text", "mark": 1, "text": "${ESPN_USER}"},
                        {"op": "type_text", "mark": 2, "text": "${ESPN_PASSWORD}", "secret": True},
                        {"op": "click", "mark": 3},
                    ]
                }
            ),
            {"input_tokens": 1100, "output_tokens": 150},
        )
    ],
}


def test_fake_server_fixture_yields_fixture_state(espn_wf, espn_oracle):
    replies = {k: list(v) for k, v in LOGIN_REPLIES.items()}
    with FakeChat(replies) as server:
        res = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), _chat(server.url))
    expected = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), espn_oracle).concrete
    assert replace(res.concrete, synthesis_tokens=TokenUsage(), state_id="") == replace(
        expected, synthesis_tokens=TokenUsage(), state_id=""
    )
    # usage is the exact sum of what the server reported
    assert res.usage == TokenUsage(900 + 1000 + 1100, 12 + 80 + 150)
    body = server.requests[0]
    assert body["model"] == "m1" and body["temperature"] == 0.2
    assert body["messages"][0]["role"] == "system" and "[3] <button#login-btn" in body["messages"][0]["content"]
    assert server.headers[0]["Authorization"] == "Bearer test-key"


def test_malformed_detectors_rejected_after_one_retry(espn_wf):
    replies = {
        "select": [('{"state": "login"}', {"input_tokens": 10, "output_tokens": 1})],
        "generate": [
            ('{"detector_sets": [[{"kind": "pixel"}]]}', {"input_tokens": 20, "output_tokens": 2}),
            ("no json here", {"input_tokens": 30, "output_tokens": 3}),
        ],
    }
    with FakeChat(replies) as server:
        with pytest.raises(DetectorRejected) as info:
            synthesize(SynthesisRequest(espn_wf, _login_snapshot()), _chat(server.url))
    assert len(server.requests) == 3
    assert "rejected" in server.requests[2]["messages"][-1]["content"]
    assert info.value.usage == TokenUsage(60, 6)


def test_http_error_becomes_backend_error(espn_wf):
    with FakeChat({}, status=429) as server:
        with pytest.raises(BackendError) as info:
            synthesize(SynthesisRequest(espn_wf, _login_snapshot()), _chat(server.url))
    assert info.value.status == 429 and "rate limited" in info.value.body


def test_unknown_mark_is_malformed(espn_wf):
    replies = {
        "select": [('{"state": "login"}', {"input_tokens": 1, "output_tokens": 1})],
        "generate": [(json.dumps({"detector_sets": GOOD_SETS}), {"input_tokens": 1, "output_tokens": 1})],
        "decompose": [
            ('{"instructions": [{"op": "click", "mark": 99}]}', {"input_tokens": 1, "output_tokens": 1}),
            ('{"instructions": [{"op": "click", "mark": 3}]}', {"input_tokens": 1, "output_tokens": 1}),
        ],
    }
    with FakeChat(replies) as server:
        res = synthesize(SynthesisRequest(espn_wf, _login_snapshot()), _chat(server.url))
    assert res.concrete.program == ActionProgram((Click(S("#login-btn")),))


def test_chat_config_needs_key_and_endpoint():
    with pytest.raises(ValueError):
        chat_backend(endpoint="http://x", environ={})
    with pytest.raises(ValueError):
        chat_backend(endpoint="", environ={"NETGENT_LLM_KEY": "k"})
    assert chat_backend(endpoint="http://x", environ={"NETGENT_LLM_KEY": "k"}).config.api_key == "k"


def test_extract_json_tolerates_prose():
    assert extract_json('noise {"a": {"b": 1}} trailing {') == {"a": {"b": 1}}
    with pytest.raises(ValueError):
        extract_json("nothing")
