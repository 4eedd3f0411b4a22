"""Environment contract (observe / perform) and the WebDriver adapter.

Instruction failures are reported inside :class:`StepResult` rather than
raised, so the controller can treat them as drift signals. Only transport
problems outside an instruction (opening a session, observing) raise
:class:`AdapterError`.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

import httpx

from .actions import (
    AssertDetector,
    DragToFraction,
    Hover,
    Instruction,
    Navigate,
    PressKey,
    RealismParams,
    Scroll,
    Sleep,
    TypeText,
    WaitFor,
    keystroke_schedule,
    plan_mouse_path,
)
from .detectors import match_detector
from .page_model import DomNode, PageSnapshot, dom_from_dict
from .workflow import resolve_placeholders

__all__ = [
    "AdapterError",
    "FailureKind",
    "Failure",
    "StepResult",
    "EnvCapabilities",
    "Environment",
    "observe",
    "perform",
    "WebDriverConfig",
    "WebDriverEnvironment",
]

SELECTOR_NOT_FOUND = "selector_not_found"
TIMEOUT = "timeout"
NAVIGATION_ERROR = "navigation_error"
ADAPTER_ERROR = "adapter_error"
FailureKind = str
FAILURE_KINDS = (SELECTOR_NOT_FOUND, TIMEOUT, NAVIGATION_ERROR, ADAPTER_ERROR)


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class Failure:
    instruction_index: int
    kind: FailureKind
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.kind!r}")


@dataclass(frozen=True)
class StepResult:
    ok: bool
    observed_after: PageSnapshot
    failure: Failure | None = None

    def __post_init__(self) -> None:
        if self.ok != (self.failure is None):
            raise ValueError("ok must be true exactly when failure is absent")


@dataclass(frozen=True)
class EnvCapabilities:
    supports_mouse_paths: bool = False
    supports_proxy: bool = False
    supports_profile_dir: bool = False


@runtime_checkable
class Environment(Protocol):
    capabilities: EnvCapabilities

    def observe(self) -> PageSnapshot: ...

    def perform(self, ins: Instruction, realism: RealismParams, index: int = 0) -> StepResult: ...

    def close(self) -> None: ...


def observe(env: Environment) -> PageSnapshot:
    return env.observe()


def perform(env: Environment, ins: Instruction, realism: RealismParams, index: int = 0) -> StepResult:
    return env.perform(ins, realism, index)


# --------------------------------------------------------------------------
# W3C WebDriver adapter
# --------------------------------------------------------------------------

_ELEMENT_KEY = "element-6066-11e4-a52e-4f735466cecf"

# Named keys from the WebDriver key table.
_KEYS = {
    "Enter": "\ue007",
    "Return": "\ue006",
    "Tab": "\ue004",
    "Escape": "\ue00c",
    "Backspace": "\ue003",
    "Space": " ",
    "ArrowLeft": "\ue012",
    "ArrowUp": "\ue013",
    "ArrowRight": "\ue014",
    "ArrowDown": "\ue015",
    "PageUp": "\ue00e",
    "PageDown": "\ue00f",
    "Home": "\ue011",
    "End": "\ue010",
}

# Serializes the live DOM into the canonical tag/id/classes/attributes/text/children shape.
SNAPSHOT_SCRIPT = """
function ser(el) {
  var attrs = {}, own = [], kids = [];
  for (var i = 0; i < el.attributes.length; i++) {
    var a = el.attributes[i];
    if (a.name !== 'id' && a.name !== 'class') attrs[a.name] = a.value;
  }
  if (el.value !== undefined && typeof el.value !== 'object' && el.type !== 'password') attrs['value'] = String(el.value);
  if (el.tagName === 'VIDEO') { attrs['currenttime'] = String(el.currentTime); attrs['paused'] = String(el.paused); }
  for (var c = el.firstChild; c; c = c.nextSibling) {
    if (c.nodeType === 3) own.push(c.nodeValue);
    else if (c.nodeType === 1 && c.tagName !== 'SCRIPT' && c.tagName !== 'STYLE') kids.push(ser(c));
  }
  return {tag: el.tagName.toLowerCase(), id: el.id || null,
          classes: Array.from(el.classList || []), attributes: attrs,
          text: own.join('').replace(/\\s+/g, ' ').trim(), children: kids};
}
return {url: location.href, title: document.title, root: ser(document.documentElement)};
"""


@dataclass(frozen=True)
class WebDriverConfig:
    endpoint: str
    proxy: str | None = None
    profile_dir: str | None = None
    browser_name: str = "chrome"

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None, **overrides: Any) -> WebDriverConfig:
        env = os.environ if environ is None else environ
        values: dict[str, Any] = {
            "endpoint": env.get("NETGENT_BROWSER_URL", ""),
            "proxy": env.get("NETGENT_PROXY") or None,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        if not values["endpoint"]:
            raise AdapterError("no WebDriver endpoint (set NETGENT_BROWSER_URL)")
        return cls(**values)


class WebDriverEnvironment:
    """Drives a browser through the W3C WebDriver HTTP protocol.

    Mouse paths and keystroke timings are expressed as pointer/key action
    sequences; proxy and profile directory are passed through untouched.
    """

    def __init__(
        self,
        config: WebDriverConfig,
        *,
        secrets: Mapping[str, str] | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        poll_interval_ms: int = 100,
    ) -> None:
        self.config = config
        self.secrets = secrets
        self.client = client or httpx.Client(timeout=30.0)
        self.sleep = sleep
        self.clock = clock
        self.poll_interval_ms = poll_interval_ms
        self.capabilities = EnvCapabilities(
            supports_mouse_paths=True,
            supports_proxy=config.proxy is not None,
            supports_profile_dir=config.profile_dir is not None,
        )
        self.session_id: str | None = None
        self._revision = 0
        self._ticks = 0
        self._last_root: DomNode | None = None
        self._pointer = (0.0, 0.0)

    # -- protocol plumbing -------------------------------------------------

    def _url(self, path: str) -> str:
        return self.config.endpoint.rstrip("/") + path

    def _call(self, method: str, path: str, body: Any = None) -> Any:
        try:
            resp = self.client.request(method, self._url(path), json=body)
        except httpx.HTTPError as exc:
            raise AdapterError(f"{method} {path}: {exc}") from exc
        try:
            payload = resp.json()
        except ValueError:
            raise AdapterError(f"{method} {path}: HTTP {resp.status_code}, non-JSON body") from None
        value = payload.get("value") if isinstance(payload, dict) else None
        if resp.status_code >= 400:
            err = value.get("error", "") if isinstance(value, dict) else ""
            msg = value.get("message", "") if isinstance(value, dict) else ""
            raise AdapterError(f"{method} {path}: HTTP {resp.status_code} {err}: {msg}")
        return value

    def _sess(self, suffix: str = "") -> str:
        if self.session_id is None:
            self.open()
        return f"/session/{self.session_id}{suffix}"

    def open(self) -> None:
        caps: dict[str, Any] = {"browserName": self.config.browser_name}
        if self.config.proxy:
            caps["proxy"] = {
                "proxyType": "manual",
                "httpProxy": self.config.proxy,
                "sslProxy": self.config.proxy,
            }
        if self.config.profile_dir:
            caps["goog:chromeOptions"] = {"args": [f"--user-data-dir={self.config.profile_dir}"]}
        value = self._call("POST", "/session", {"capabilities": {"alwaysMatch": caps}})
        try:
            self.session_id = value["sessionId"]
        except (TypeError, KeyError):
            raise AdapterError("new session response lacks sessionId") from None

    def close(self) -> None:
        if self.session_id is not None:
            try:
                self._call("DELETE", f"/session/{self.session_id}")
            finally:
                self.session_id = None

    # -- contract ----------------------------------------------------------

    def observe(self) -> PageSnapshot:
        value = self._call("POST", self._sess("/execute/sync"), {"script": SNAPSHOT_SCRIPT, "args": []})
        try:
            root = dom_from_dict(value["root"])
            url, title = value["url"], value.get("title", "")
        except (TypeError, KeyError, ValueError) as exc:
            raise AdapterError(f"bad snapshot payload: {exc}") from None
        if self._last_root is not None and root != self._last_root:
            self._revision += 1
        self._last_root = root
        self._ticks += 1
        return PageSnapshot(url=url, title=title, root=root, captured_at=self._ticks, env_revision=self._revision)

    def _find(self, selector: Any) -> str | None:
        value = self._call("POST", self._sess("/elements"), {"using": "css selector", "value": str(selector)})
        if not value:
            return None
        return value[0][_ELEMENT_KEY]

    def _center(self, element_id: str) -> tuple[float, float, dict[str, float]]:
        rect = self._call("GET", self._sess(f"/element/{element_id}/rect"))
        return rect["x"] + rect["width"] / 2, rect["y"] + rect["height"] / 2, rect

    def _move_actions(self, target: tuple[float, float], realism: RealismParams) -> list[dict[str, Any]]:
        path = plan_mouse_path(self._pointer, target, realism)
        self._pointer = target
        step_ms = max(1, 400 // len(path))
        return [
            {"type": "pointerMove", "origin": "viewport", "x": int(round(x)), "y": int(round(y)), "duration": step_ms}
            for x, y in path
        ]

    def _pointer_actions(self, actions: list[dict[str, Any]]) -> None:
        body = {"actions": [{"type": "pointer", "id": "mouse", "parameters": {"pointerType": "mouse"}, "actions": actions}]}
        self._call("POST", self._sess("/actions"), body)

    def _key_actions(self, chars: list[tuple[str, int]]) -> None:
        seq: list[dict[str, Any]] = []
        for ch, delay in chars:
            if delay:
                seq.append({"type": "pause", "duration": delay})
            seq.append({"type": "keyDown", "value": ch})
            seq.append({"type": "keyUp", "value": ch})
        body = {"actions": [{"type": "key", "id": "keyboard", "actions": seq}]}
        self._call("POST", self._sess("/actions"), body)

    def perform(self, ins: Instruction, realism: RealismParams, index: int = 0) -> StepResult:
        try:
            failure = self._perform(ins, realism, index)
        except AdapterError as exc:
            failure = Failure(index, ADAPTER_ERROR, str(exc))
        if failure is None and not isinstance(ins, (Sleep, WaitFor, AssertDetector, Hover)):
            self._revision += 1
        try:
            snap = self.observe()
        except AdapterError as exc:
            raise AdapterError(f"cannot observe after {ins.op}: {exc}") from exc
        return StepResult(failure is None, snap, failure)

    def _perform(self, ins: Instruction, realism: RealismParams, index: int) -> Failure | None:
        if isinstance(ins, Navigate):
            try:
                self._call("POST", self._sess("/url"), {"url": ins.url})
            except AdapterError as exc:
                return Failure(index, NAVIGATION_ERROR, str(exc))
            return None
        if isinstance(ins, Sleep):
            self.sleep(ins.ms / 1000)
            return None
        if isinstance(ins, (WaitFor, AssertDetector)):
            deadline = self.clock() + (ins.timeout_ms / 1000 if isinstance(ins, WaitFor) else 0)
            while True:
                if match_detector(ins.detector, self.observe()):
                    return None
                if self.clock() >= deadline:
                    kind = TIMEOUT if isinstance(ins, WaitFor) else SELECTOR_NOT_FOUND
                    return Failure(index, kind, f"detector not matched: {ins.detector}")
                self.sleep(self.poll_interval_ms / 1000)
        if isinstance(ins, PressKey):
            key = _KEYS.get(ins.key, ins.key)
            self._key_actions([(key, 0)])
            return None
        if isinstance(ins, Scroll):
            body = {
                "actions": [
                    {
                        "type": "wheel",
                        "id": "wheel",
                        "actions": [{"type": "scroll", "x": 0, "y": 0, "deltaX": 0, "deltaY": ins.delta_y, "origin": "viewport"}],
                    }
                ]
            }
            self._call("POST", self._sess("/actions"), body)
            return None

        element_id = self._find(ins.selector)
        if element_id is None:
            return Failure(index, SELECTOR_NOT_FOUND, f"no element for {ins.selector}")
        if isinstance(ins, TypeText):
            try:
                value = resolve_placeholders(ins.text, self.secrets)
            except KeyError as exc:
                return Failure(index, ADAPTER_ERROR, f"unresolved placeholder {exc}")
            self._call("POST", self._sess(f"/element/{element_id}/click"), {})
            self._key_actions(keystroke_schedule(value, realism) if value else [])
            return None
        x, y, rect = self._center(element_id)
        if isinstance(ins, DragToFraction):
            x = rect["x"] + ins.fraction * rect["width"]
        moves = self._move_actions((x, y), realism)
        if isinstance(ins, Hover):
            self._pointer_actions(moves)
            return None
        down_up = [{"type": "pointerDown", "button": 0}, {"type": "pointerUp", "button": 0}]
        self._pointer_actions(moves + down_up)
        return None

