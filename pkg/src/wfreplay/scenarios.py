"""Builders for the bundled ESPN-like fixtures.

The JSON and ``.workflow`` files under ``wfreplay/fixtures`` are generated
from these builders (``python3 -m wfreplay.scenarios <dir>``) and the test
suite checks they stay in sync.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any

from .detectors import detector_to_dict, element, text, url
from .sim import HOST, EspnConfig, SimApp, app_to_dict, build_espnlike_app
from .workflow import AbstractState, AbstractWorkflow, serialize_workflow

__all__ = [
    "ESPN_STATE_TOKENS",
    "ESPN_PIN_TOKENS",
    "ESPN10_STATE_TOKENS",
    "espn_workflow",
    "espn10_workflow",
    "espn_book",
    "espn10_book",
    "espn_app",
    "espn10_app",
    "fixture_path",
    "fixture_files",
    "write_fixtures",
]

ESPN_STATE_TOKENS = 71_080
ESPN_PIN_TOKENS = 20_000
ESPN10_STATE_TOKENS = 42_600
LOGIN_URL = f"{HOST}/login"
PLAYBACK_URL = f"{HOST}/play/101"
SEEK_FRACTION = 300 / 3600


def _st(i: int, name: str, trigger: str, action: str = "", **hints: str) -> AbstractState:
    return AbstractState(name, trigger, action, is_end=not action, hints=hints, declaration_index=i)


_RULES: dict[str, tuple[str, str]] = {
    "accept_cookies": ("a privacy consent dialog covers the page", "accept all cookies"),
    "login": (
        "the login form is shown",
        "enter ${ESPN_USER} as email and ${ESPN_PASSWORD} as password, then press Log In",
    ),
    "select_profile": ("the profile picker asks who is watching", "choose the snlclient profile"),
    "type_pin": ("the profile asks for its PIN", "type ${ESPN_PIN} into the PIN field and continue"),
    "dismiss_promo": ("a special offer dialog is shown", "close the offer without upgrading"),
    "navigate_to_espn": ("the home page with brand tiles is shown", "open the ESPN brand tile"),
    "select_video": ("the ESPN hub lists videos", "open the first video"),
    "skip_ad": ("an advertisement is playing", "skip the ad"),
    "start_playback": ("a video detail page with a Play button is shown", "press Play"),
    "seek_to_five_minutes": ("the player is at the start of the video", "drag the seek bar to the five minute mark"),
}
_PLAYBACK_TRIGGER = "a video is playing and its current time keeps advancing"


def _workflow(wid: str, names: list[str], entry: str, end_hints: dict[str, str], max_steps: int) -> AbstractWorkflow:
    states = [_st(i, n, *_RULES[n]) for i, n in enumerate(names)]
    states.append(_st(len(names), "playback", _PLAYBACK_TRIGGER, **end_hints))
    return AbstractWorkflow(wid, "espn", entry, tuple(states), max_steps)


_PLAYBACK_HINTS = {"progress_selector": "video#player", "progress_attribute": "currenttime"}
_ESPN_NAMES = ["login", "select_profile", "type_pin", "navigate_to_espn", "select_video", "skip_ad", "start_playback"]
_ESPN10_NAMES = [
    "accept_cookies",
    "login",
    "select_profile",
    "type_pin",
    "dismiss_promo",
    "navigate_to_espn",
    "select_video",
    "skip_ad",
    "start_playback",
    "seek_to_five_minutes",
]


def espn_workflow(workflow_id: str = "espn", entry: str = LOGIN_URL) -> AbstractWorkflow:
    return _workflow(workflow_id, _ESPN_NAMES, entry, _PLAYBACK_HINTS, 40)


def espn10_workflow() -> AbstractWorkflow:
    hints = dict(_PLAYBACK_HINTS, end_selector="input#seek[value=300]")
    return _workflow("espn10", _ESPN10_NAMES, LOGIN_URL, hints, 60)


def _d(*dets) -> list[dict[str, Any]]:
    return [detector_to_dict(d) for d in dets]


def _click(**target: Any) -> dict[str, Any]:
    return {"op": "click", "target": target}


_BOOK_STATES: dict[str, dict[str, Any]] = {
    "accept_cookies": {
        "recognize": _d(url("*/login"), text("We value your privacy")),
        "steps": [_click(tag="button", text="Accept All")],
    },
    "login": {
        "recognize": _d(url("*/login"), element("form#login-form"), text("Log In")),
        "steps": [
            {"op": "type_text", "target": {"tag": "input", "attributes": {"name": "email"}}, "text": "${ESPN_USER}"},
            {
                "op": "type_text",
                "target": {"tag": "input", "attributes": {"name": "password"}},
                "text": "${ESPN_PASSWORD}",
                "secret": True,
            },
            _click(tag="button", text="Log In"),
        ],
    },
    "select_profile": {
        "recognize": _d(url("*/select-profile"), text("Who's Watching?")),
        "steps": [_click(tag="a", attributes={"data-profile": "snlclient"})],
    },
    "type_pin": {
        "recognize": _d(url("*/enter-pin"), element("input#pin-entry"), text("Enter your profile PIN")),
        "steps": [
            {
                "op": "type_text",
                "target": {"tag": "input", "attributes": {"name": "pin"}},
                "text": "${ESPN_PIN}",
                "secret": True,
            },
            _click(tag="button", text="Continue"),
        ],
    },
    "dismiss_promo": {
        "recognize": _d(url("*/home"), text("Special Offer")),
        "steps": [_click(tag="button", text="No thanks")],
    },
    "navigate_to_espn": {
        "recognize": _d(url("*/home"), text("Recommended For You"), element("nav.brands")),
        "steps": [_click(tag="a", attributes={"aria-label": "ESPN"})],
    },
    "select_video": {
        "recognize": _d(url("*/brand/espn"), element("a.video-tile")),
        "steps": [_click(tag="a", text="SportsCenter")],
    },
    "skip_ad": {
        "recognize": _d(url("*/ad-break"), text("Advertisement")),
        "steps": [_click(tag="button", text="Skip Ad")],
    },
    "start_playback": {
        "recognize": _d(url("*/video/*"), element("button.play-button")),
        "steps": [_click(tag="button", text="Play")],
    },
    "seek_to_five_minutes": {
        "recognize": _d(url("*/play/*"), element("input#seek[value=0]")),
        "steps": [
            {
                "op": "drag_to_fraction",
                "target": {"tag": "input", "attributes": {"type": "range"}},
                "fraction": SEEK_FRACTION,
            }
        ],
    },
    "playback": {
        "recognize": _d(url("*/play/*"), element("video#player")),
    },
}


def _book(w: AbstractWorkflow, default_tokens: int, overrides: dict[str, int]) -> dict[str, Any]:
    states = {}
    for st in w.states:
        entry = dict(_BOOK_STATES[st.name])
        entry = {"tokens": overrides.get(st.name, default_tokens), **entry}
        states[st.name] = entry
    return {"workflow_id": w.workflow_id, "default_tokens": default_tokens, "states": states}


def espn_book(workflow_id: str = "espn") -> dict[str, Any]:
    return _book(espn_workflow(workflow_id), ESPN_STATE_TOKENS, {"type_pin": ESPN_PIN_TOKENS})


def espn10_book() -> dict[str, Any]:
    return _book(espn10_workflow(), ESPN10_STATE_TOKENS, {})


def espn_app(**cfg: Any) -> SimApp:
    return build_espnlike_app(EspnConfig(**cfg))


def espn10_app() -> SimApp:
    return build_espnlike_app(EspnConfig(pin_required=True, ad_probability=1.0, cookie_banner=True, promo=True))


def _json(data: Any) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def fixture_files() -> dict[str, str]:
    """File name to content for every bundled fixture."""
    ended_app = replace(espn_app(), initial_page="playback")
    return {
        "espn.workflow": serialize_workflow(espn_workflow()),
        "espn.oracle.json": _json(espn_book()),
        "espn.sim.json": _json(app_to_dict(espn_app())),
        "espn_paused.sim.json": _json(app_to_dict(espn_app(video_paused=True))),
        "espn10.workflow": serialize_workflow(espn10_workflow()),
        "espn10.oracle.json": _json(espn10_book()),
        "espn10.sim.json": _json(app_to_dict(espn10_app())),
        "espn_ended.workflow": serialize_workflow(espn_workflow("espn_ended", PLAYBACK_URL)),
        "espn_ended.oracle.json": _json(espn_book("espn_ended")),
        "espn_ended.sim.json": _json(app_to_dict(ended_app)),
    }


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file."""
    path = Path(str(resources.files("wfreplay").joinpath("fixtures", name)))
    if not path.exists():
        raise FileNotFoundError(name)
    return path


def write_fixtures(directory: str | Path) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, content in fixture_files().items():
        path = out / name
        path.write_text(content, encoding="utf-8")
        written.append(path)
    return written


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).parent / "fixtures")
    for p in write_fixtures(target):
        print(p)
