"""Deterministic simulated web application.

A :class:`SimApp` is an immutable page graph: DOM templates, transitions
triggered by instructions, stochastic interstitial pages, and per-tick
attribute dynamics. A :class:`SimEnvironment` is one private, mutable
session over it that implements the environment contract. Time is a
logical tick counter; the only randomness is a single seeded generator.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .actions import (
    AssertDetector,
    Click,
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
)
from .detectors import match_detector
from .environment import (
    ADAPTER_ERROR,
    NAVIGATION_ERROR,
    SELECTOR_NOT_FOUND,
    TIMEOUT,
    EnvCapabilities,
    Failure,
    StepResult,
)
from .page_model import (
    DomNode,
    PageSnapshot,
    SelectorAst,
    SimpleSelector,
    dom_from_dict,
    dom_to_dict,
    dom_to_json,
    el,
    index_tree,
    iter_nodes,
    parse_selector,
    query_selector,
    replace_node,
    set_attribute,
)
from .workflow import resolve_placeholders

__all__ = [
    "SimPage",
    "Transition",
    "Interstitial",
    "Dynamic",
    "Reveal",
    "SimApp",
    "DriftOp",
    "TargetNotFound",
    "SimEnvironment",
    "EspnConfig",
    "build_espnlike_app",
    "apply_drift",
    "app_to_dict",
    "app_from_dict",
    "load_app",
    "save_app",
    "format_number",
]

OPS = ("click", "type_text", "press_key", "hover", "drag_to_fraction")
DRIFT_KINDS = ("rename_class", "rename_id", "change_text", "reorder_children", "insert_interstitial", "require_pin")


class TargetNotFound(LookupError):
    pass


@dataclass(frozen=True)
class SimPage:
    page_id: str
    url: str
    title: str
    root: DomNode

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", index_tree(self.root))


@dataclass(frozen=True)
class Transition:
    """Firing ``op`` on an element matched by ``selector`` moves to ``goto`` and/or applies ``sets``.

    For ``press_key`` the selector field holds the key name.
    """

    page_id: str
    selector: str
    op: str
    goto: str | None = None
    sets: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise ValueError(f"unknown transition op {self.op!r}")
        object.__setattr__(self, "sets", tuple(tuple(s) for s in self.sets))


@dataclass(frozen=True)
class Interstitial:
    page_id: str
    before: str
    probability: float
    dismiss_selector: str

    def __post_init__(self) -> None:
        if not (0.0 <= self.probability <= 1.0):
            raise ValueError(f"probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class Dynamic:
    """Per-tick numeric increment of an attribute, optionally gated on another attribute."""

    page_id: str
    selector: str
    attribute: str
    delta: float
    when_attribute: str | None = None
    when_value: str | None = None


@dataclass(frozen=True)
class Reveal:
    """Sets text or an attribute once the page has been shown for ``after_ticks`` ticks."""

    page_id: str
    after_ticks: int
    selector: str
    text: str | None = None
    attribute: str | None = None
    value: str | None = None


@dataclass(frozen=True)
class SimApp:
    pages: Mapping[str, SimPage]
    transitions: tuple[Transition, ...]
    initial_page: str
    interstitials: tuple[Interstitial, ...] = ()
    dynamics: tuple[Dynamic, ...] = ()
    reveals: tuple[Reveal, ...] = ()
    seed: int = 0
    tick_ms: int = 100
    name: str = "sim"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pages", dict(self.pages))
        for attr in ("transitions", "interstitials", "dynamics", "reveals"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if self.initial_page not in self.pages:
            raise ValueError(f"initial page {self.initial_page!r} missing")
        for t in self.transitions:
            if t.page_id not in self.pages or (t.goto is not None and t.goto not in self.pages):
                raise ValueError(f"transition references a missing page: {t}")
        for i in self.interstitials:
            if i.page_id not in self.pages or i.before not in self.pages:
                raise ValueError(f"interstitial references a missing page: {i}")
        for d in (*self.dynamics, *self.reveals):
            if d.page_id not in self.pages:
                raise ValueError(f"{type(d).__name__} references a missing page: {d}")
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be positive")

    def page_by_url(self, url: str) -> SimPage | None:
        for page in self.pages.values():
            if page.url == url:
                return page
        return None


def format_number(value: float) -> str:
    """Attribute text for a numeric value; integral values print without a fraction."""
    if math.isfinite(value) and abs(value - round(value)) < 1e-9:
        return str(int(round(value)))
    return repr(round(value, 6))


def _as_float(text: str | None) -> float | None:
    if text is None:
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


# --------------------------------------------------------------------------
# Session
# --------------------------------------------------------------------------


class SimEnvironment:
    """One run's private session over a SimApp."""

    capabilities = EnvCapabilities(supports_mouse_paths=False, supports_proxy=False, supports_profile_dir=False)

    def __init__(
        self,
        app: SimApp,
        seed: int | None = None,
        *,
        secrets: Mapping[str, str] | None = None,
        start_page: str | None = None,
    ) -> None:
        self.app = app
        self.seed = app.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.secrets = dict(secrets or {})
        self.tick = 0
        self.revision = 0
        self.history: list[str] = []
        self._by_page: dict[str, list[Transition]] = {}
        for t in app.transitions:
            self._by_page.setdefault(t.page_id, []).append(t)
        self._enter(start_page or app.initial_page, draw=True)

    # -- internals ---------------------------------------------------------

    def _enter(self, page_id: str, draw: bool = True) -> None:
        self._pending: str | None = None
        if draw:
            for inter in self.app.interstitials:
                if inter.before == page_id and self.rng.random() < inter.probability:
                    self._pending = page_id
                    page_id = inter.page_id
                    break
        page = self.app.pages[page_id]
        self.page_id = page_id
        self.dom = page.root
        self.entered_at = self.tick
        self.revision += 1
        self.history.append(page_id)

    @property
    def page(self) -> SimPage:
        return self.app.pages[self.page_id]

    def _advance(self, ticks: int) -> None:
        for _ in range(ticks):
            self.tick += 1
            before = self.dom
            for dyn in self.app.dynamics:
                if dyn.page_id != self.page_id:
                    continue
                for node in query_selector(self.dom, dyn.selector):
                    if dyn.when_attribute is not None and node.get(dyn.when_attribute) != dyn.when_value:
                        continue
                    cur = _as_float(node.get(dyn.attribute))
                    if cur is None:
                        continue
                    self.dom = set_attribute(self.dom, node.node_index, dyn.attribute, format_number(cur + dyn.delta))
            for rev in self.app.reveals:
                if rev.page_id == self.page_id and self.tick - self.entered_at == rev.after_ticks:
                    for node in query_selector(self.dom, rev.selector):
                        if rev.text is not None:
                            self.dom = replace_node(self.dom, node.node_index, replace(node, text=rev.text))
                        if rev.attribute is not None:
                            self.dom = set_attribute(self.dom, node.node_index, rev.attribute, rev.value or "")
            if self.dom is not before and self.dom != before:
                self.revision += 1

    def _fire(self, op: str, target: DomNode | None, key: str | None = None) -> None:
        for t in self._by_page.get(self.page_id, ()):
            if t.op != op:
                continue
            if op == "press_key":
                if t.selector != key:
                    continue
            elif target is None or not any(n.node_index == target.node_index for n in query_selector(self.dom, t.selector)):
                continue
            for sel, attr, value in t.sets:
                for node in query_selector(self.dom, sel):
                    self.dom = set_attribute(self.dom, node.node_index, attr, value)
                self.revision += 1
            if t.goto is not None:
                self._enter(t.goto)
            return
        if op == "click" and target is not None:
            for inter in self.app.interstitials:
                if inter.page_id == self.page_id and self._pending is not None:
                    hits = query_selector(self.dom, inter.dismiss_selector)
                    if any(n.node_index == target.node_index for n in hits):
                        self._enter(self._pending, draw=False)
                        return

    # -- contract ----------------------------------------------------------

    def observe(self) -> PageSnapshot:
        page = self.page
        return PageSnapshot(
            url=page.url, title=page.title, root=self.dom, captured_at=self.tick, env_revision=self.revision
        )

    def close(self) -> None:
        pass

    def perform(self, ins: Instruction, realism: RealismParams | None = None, index: int = 0) -> StepResult:
        failure = self._perform(ins, realism or RealismParams(seed=self.seed), index)
        return StepResult(failure is None, self.observe(), failure)

    def _ticks_for(self, ms: int) -> int:
        return math.ceil(ms / self.app.tick_ms)

    def _perform(self, ins: Instruction, realism: RealismParams, index: int) -> Failure | None:
        if isinstance(ins, Navigate):
            page = self.app.page_by_url(ins.url)
            if page is None:
                return Failure(index, NAVIGATION_ERROR, f"no page at {ins.url}")
            self._enter(page.page_id)
            return None
        if isinstance(ins, Sleep):
            self._advance(self._ticks_for(ins.ms))
            return None
        if isinstance(ins, WaitFor):
            budget = self._ticks_for(ins.timeout_ms)
            waited = 0
            while not match_detector(ins.detector, self.observe()):
                if waited >= budget:
                    return Failure(index, TIMEOUT, f"waited {ins.timeout_ms} ms")
                self._advance(1)
                waited += 1
            return None
        if isinstance(ins, AssertDetector):
            if match_detector(ins.detector, self.observe()):
                return None
            return Failure(index, SELECTOR_NOT_FOUND, "assertion detector did not match")
        if isinstance(ins, Scroll):
            return None
        if isinstance(ins, PressKey):
            self._fire("press_key", None, ins.key)
            return None

        hits = query_selector(self.dom, ins.selector)
        if not hits:
            return Failure(index, SELECTOR_NOT_FOUND, f"no element matches {ins.selector}")
        target = hits[0]
        if isinstance(ins, Click):
            self._fire("click", target)
        elif isinstance(ins, Hover):
            self._fire("hover", target)
        elif isinstance(ins, TypeText):
            try:
                value = resolve_placeholders(ins.text, self.secrets)
            except KeyError:
                value = ins.text  # the sim does not check credentials
            shown = "•" * len(value) if target.get("type") == "password" else value
            self.dom = set_attribute(self.dom, target.node_index, "value", shown)
            self.revision += 1
            if value:
                typed_ms = sum(d for _, d in keystroke_schedule(value, realism))
                self._advance(self._ticks_for(typed_ms))
            self._fire("type_text", target)
        elif isinstance(ins, DragToFraction):
            lo, hi = _as_float(target.get("min")), _as_float(target.get("max"))
            if lo is None or hi is None:
                return Failure(index, ADAPTER_ERROR, f"{ins.selector} has no numeric min/max")
            value = lo + ins.fraction * (hi - lo)
            self.dom = set_attribute(self.dom, target.node_index, "value", format_number(value))
            self.revision += 1
            self._fire("drag_to_fraction", query_selector(self.dom, ins.selector)[0])
        return None


# --------------------------------------------------------------------------
# Drift
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftOp:
    kind: str
    page_id: str
    selector: str | None = None
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        object.__setattr__(self, "payload", dict(self.payload))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "page_id": self.page_id, "selector": self.selector, "payload": dict(self.payload)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DriftOp:
        return cls(data["kind"], data["page_id"], data.get("selector"), data.get("payload", {}))

    @classmethod
    def parse(cls, text: str) -> DriftOp:
        """``kind:page[:selector[:arg]]`` or a JSON object."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_dict(json.loads(text))
        parts = text.split(":", 3)
        if len(parts) < 2:
            raise ValueError(f"drift spec needs at least kind:page, got {text!r}")
        kind, page = parts[0], parts[1]
        sel = parts[2] if len(parts) > 2 and parts[2] else None
        arg = parts[3] if len(parts) > 3 else None
        payload: dict[str, Any] = {}
        if arg is not None:
            key = {"rename_id": "new_id", "change_text": "text", "rename_class": "new", "require_pin": "next"}.get(kind, "arg")
            payload[key] = arg
        return cls(kind, page, sel, payload)


def _map_selectors(app: SimApp, page_id: str, fn: Callable[[SelectorAst], SelectorAst]) -> SimApp:
    def conv(sel: str) -> str:
        return str(fn(parse_selector(sel)))

    transitions = tuple(
        replace(t, selector=conv(t.selector) if t.op != "press_key" else t.selector)
        if t.page_id == page_id
        else t
        for t in app.transitions
    )
    interstitials = tuple(
        replace(i, dismiss_selector=conv(i.dismiss_selector)) if i.page_id == page_id else i for i in app.interstitials
    )
    dynamics = tuple(replace(d, selector=conv(d.selector)) if d.page_id == page_id else d for d in app.dynamics)
    reveals = tuple(replace(r, selector=conv(r.selector)) if r.page_id == page_id else r for r in app.reveals)
    return replace(app, transitions=transitions, interstitials=interstitials, dynamics=dynamics, reveals=reveals)


def _map_steps(fn: Callable[[SimpleSelector], SimpleSelector]) -> Callable[[SelectorAst], SelectorAst]:
    return lambda ast: SelectorAst(tuple(fn(s) for s in ast.steps))


def _targets(app: SimApp, op: DriftOp) -> tuple[SimPage, list[DomNode]]:
    page = app.pages.get(op.page_id)
    if page is None:
        raise TargetNotFound(f"no page {op.page_id!r}")
    if op.selector is None:
        return page, []
    try:
        nodes = query_selector(page.root, op.selector)
    except ValueError as exc:
        raise TargetNotFound(f"bad target selector {op.selector!r}: {exc}") from None
    if not nodes:
        raise TargetNotFound(f"{op.selector!r} matches nothing on page {op.page_id!r}")
    return page, nodes


def _with_root(app: SimApp, page: SimPage, root: DomNode) -> SimApp:
    pages = dict(app.pages)
    pages[page.page_id] = replace(page, root=root)
    return replace(app, pages=pages)


def _edit_nodes(root: DomNode, nodes: Sequence[DomNode], fn: Callable[[DomNode], DomNode]) -> DomNode:
    # Later nodes first so earlier indices stay valid; edits never change subtree sizes.
    for node in sorted(nodes, key=lambda n: -n.node_index):
        current = next(n for n in iter_nodes(root) if n.node_index == node.node_index)
        root = replace_node(root, node.node_index, fn(current))
    return root


def apply_drift(app: SimApp, op: DriftOp) -> SimApp:
    """Return a new app with one UI change applied; untouched pages keep identical DOMs."""
    page, nodes = _targets(app, op)
    p = op.payload

    if op.kind == "rename_id":
        if not nodes:
            raise TargetNotFound("rename_id needs a target selector")
        new_id = p.get("new_id")
        if not new_id:
            raise ValueError("rename_id needs payload.new_id")
        old_ids = {n.id for n in nodes[:1] if n.id}
        root = _edit_nodes(page.root, nodes[:1], lambda n: replace(n, id=new_id))
        app = _with_root(app, page, root)
        return _map_selectors(
            app, page.page_id, _map_steps(lambda s: replace(s, id=new_id) if s.id in old_ids else s)
        )

    if op.kind == "rename_class":
        old, new = p.get("old"), p.get("new")
        if not nodes or not new:
            raise TargetNotFound("rename_class needs a target selector and payload.new")
        if old is None:
            old = nodes[0].classes[0] if nodes[0].classes else None
        if old is None:
            raise TargetNotFound("target has no class to rename")

        def ren(n: DomNode) -> DomNode:
            return replace(n, classes=tuple(new if c == old else c for c in n.classes))

        root = _edit_nodes(page.root, nodes, ren)
        app = _with_root(app, page, root)
        return _map_selectors(
            app,
            page.page_id,
            _map_steps(lambda s: replace(s, classes=tuple(new if c == old else c for c in s.classes))),
        )

    if op.kind == "change_text":
        if not nodes:
            raise TargetNotFound("change_text needs a target selector")
        text = p.get("text", "")
        return _with_root(app, page, _edit_nodes(page.root, nodes[:1], lambda n: replace(n, text=text)))

    if op.kind == "reorder_children":
        if not nodes:
            raise TargetNotFound("reorder_children needs a target selector")
        order = p.get("order", "reverse")

        def reorder(n: DomNode) -> DomNode:
            kids = list(n.children)
            if order == "reverse":
                kids.reverse()
            else:
                if sorted(order) != list(range(len(kids))):
                    raise ValueError(f"order {order!r} is not a permutation of {len(kids)} children")
                kids = [kids[i] for i in order]
            return replace(n, children=tuple(kids))

        return _with_root(app, page, _edit_nodes(page.root, nodes[:1], reorder))

    if op.kind == "insert_interstitial":
        spec = p.get("page")
        if not isinstance(spec, Mapping):
            raise ValueError("insert_interstitial needs payload.page")
        new_page = _page_from_dict(spec)
        if new_page.page_id in app.pages:
            raise ValueError(f"page {new_page.page_id!r} already exists")
        pages = dict(app.pages)
        pages[new_page.page_id] = new_page
        inter = Interstitial(
            page_id=new_page.page_id,
            before=page.page_id,
            probability=float(p.get("probability", 1.0)),
            dismiss_selector=str(p["dismiss_selector"]),
        )
        return replace(app, pages=pages, interstitials=app.interstitials + (inter,))

    # require_pin: every transition leaving the target page towards ``next`` detours via a PIN page.
    if "pin" in app.pages:
        raise TargetNotFound("app already has a pin page")
    nxt = p.get("next")
    outgoing = [t for t in app.transitions if t.page_id == page.page_id and t.goto is not None]
    if nxt is None:
        if not outgoing:
            raise TargetNotFound(f"page {page.page_id!r} has no outgoing transitions")
        nxt = outgoing[0].goto
    if nxt not in app.pages:
        raise TargetNotFound(f"no page {nxt!r}")
    pin = _pin_page()
    pages = dict(app.pages)
    pages[pin.page_id] = pin
    transitions = tuple(
        replace(t, goto=pin.page_id) if t.page_id == page.page_id and t.goto == nxt else t for t in app.transitions
    ) + (Transition(pin.page_id, "#pin-submit", "click", goto=nxt),)
    return replace(app, pages=pages, transitions=transitions)


# --------------------------------------------------------------------------
# ESPN-like fixture
# --------------------------------------------------------------------------

HOST = "https://www.disneyplus.com"


def _doc(*body: DomNode) -> DomNode:
    return el("html", el("head", el("title", text="Disney+")), el("body", *body))


def _pin_page() -> SimPage:
    return SimPage(
        "pin",
        f"{HOST}/enter-pin",
        "Enter PIN",
        _doc(
            el(
                "main",
                el("h1", text="Enter your profile PIN"),
                el("label", text="PIN", attrs={"for": "pin-entry"}),
                el("input", id="pin-entry", attrs={"name": "pin", "type": "password", "maxlength": "4"}),
                el("button", id="pin-submit", classes="btn", text="Continue", attrs={"type": "submit"}),
                classes="pin-prompt",
            )
        ),
    )


@dataclass(frozen=True)
class EspnConfig:
    pin_required: bool = False
    ad_probability: float = 0.0
    seed: int = 0
    cookie_banner: bool = False
    promo: bool = False
    video_paused: bool = False


def build_espnlike_app(cfg: EspnConfig | Mapping[str, Any] | None = None) -> SimApp:
    """login -> profiles -> [pin] -> home -> espn_hub -> video_page -> [ad] -> playback."""
    if cfg is None:
        cfg = EspnConfig()
    elif isinstance(cfg, Mapping):
        cfg = EspnConfig(**cfg)
    pages = [
        SimPage(
            "login",
            f"{HOST}/login",
            "Log In | Disney+",
            _doc(
                el("header", el("h1", text="Disney+")),
                el(
                    "form",
                    el("label", text="Email", attrs={"for": "email"}),
                    el("input", id="email", attrs={"name": "email", "type": "email"}),
                    el("label", text="Password", attrs={"for": "password"}),
                    el("input", id="password", attrs={"name": "password", "type": "password"}),
                    el("button", id="login-btn", classes="btn btn-primary", text="Log In", attrs={"type": "submit"}),
                    id="login-form",
                ),
            ),
        ),
        SimPage(
            "profiles",
            f"{HOST}/select-profile",
            "Who's Watching? | Disney+",
            _doc(
                el("h1", text="Who's Watching?"),
                el(
                    "div",
                    el("a", el("span", text="snlclient"), classes="profile-tile", attrs={"data-profile": "snlclient", "href": "#"}),
                    el("a", el("span", text="Kids"), classes="profile-tile", attrs={"data-profile": "kids", "href": "#"}),
                    classes="profile-grid",
                ),
            ),
        ),
        SimPage(
            "home",
            f"{HOST}/home",
            "Home | Disney+",
            _doc(
                el(
                    "nav",
                    el("a", text="Disney", classes="brand-tile", attrs={"aria-label": "Disney", "href": "/brand/disney"}),
                    el("a", text="Marvel", classes="brand-tile", attrs={"aria-label": "Marvel", "href": "/brand/marvel"}),
                    el("a", text="ESPN", classes="brand-tile", attrs={"aria-label": "ESPN", "href": "/brand/espn"}),
                    classes="brands",
                ),
                el("h2", text="Recommended For You"),
            ),
        ),
        SimPage(
            "espn_hub",
            f"{HOST}/brand/espn",
            "ESPN | Disney+",
            _doc(
                el("h1", text="ESPN"),
                el(
                    "div",
                    el("a", text="SportsCenter", id="first-video", classes="video-tile", attrs={"data-video": "101", "href": "/video/101"}),
                    el("a", text="NBA Today", classes="video-tile", attrs={"data-video": "102", "href": "/video/102"}),
                    el("a", text="30 for 30", classes="video-tile", attrs={"data-video": "103", "href": "/video/103"}),
                    classes="video-row",
                ),
            ),
        ),
        SimPage(
            "video_page",
            f"{HOST}/video/101",
            "SportsCenter | Disney+",
            _doc(
                el("h1", text="SportsCenter"),
                el("p", text="Daily sports news and highlights.", classes="synopsis"),
                el("button", id="play-btn", classes="play-button", text="Play"),
            ),
        ),
        SimPage(
            "playback",
            f"{HOST}/play/101",
            "SportsCenter | Disney+",
            _doc(
                el(
                    "div",
                    el(
                        "video",
                        id="player",
                        attrs={"currenttime": "0", "paused": "true" if cfg.video_paused else "false", "duration": "3600"},
                    ),
                    el(
                        "div",
                        el("input", id="seek", classes="slider", attrs={"type": "range", "min": "0", "max": "3600", "value": "0"}),
                        el("span", text="Now Playing", classes="status"),
                        classes="controls",
                    ),
                    classes="player",
                )
            ),
        ),
    ]
    transitions = [
        Transition("login", "#login-btn", "click", goto="profiles"),
        Transition("profiles", "a.profile-tile", "click", goto="home"),
        Transition("home", "a.brand-tile[aria-label=ESPN]", "click", goto="espn_hub"),
        Transition("espn_hub", "a.video-tile", "click", goto="video_page"),
        Transition("video_page", "#play-btn", "click", goto="playback"),
    ]
    interstitials = []
    if cfg.ad_probability > 0:
        pages.append(
            SimPage(
                "ad",
                f"{HOST}/ad-break",
                "Advertisement",
                _doc(
                    el(
                        "div",
                        el("span", text="Advertisement", classes="ad-label"),
                        el("span", text="Your video will play after this ad.", classes="ad-note"),
                        el("button", id="skip-ad", classes="skip", text="Skip Ad"),
                        classes="ad-overlay",
                    )
                ),
            )
        )
        interstitials.append(Interstitial("ad", "playback", cfg.ad_probability, "#skip-ad"))
    if cfg.cookie_banner:
        pages.append(
            SimPage(
                "cookies",
                f"{HOST}/login",
                "Disney+",
                _doc(
                    el(
                        "div",
                        el("h2", text="We value your privacy"),
                        el("button", id="accept-cookies", classes="btn", text="Accept All"),
                        el("button", id="reject-cookies", classes="btn", text="Reject All"),
                        classes="consent-dialog",
                        attrs={"role": "dialog"},
                    )
                ),
            )
        )
        interstitials.append(Interstitial("cookies", "login", 1.0, "#accept-cookies"))
        transitions.append(Transition("cookies", "#reject-cookies", "click", goto="login"))
    if cfg.promo:
        pages.append(
            SimPage(
                "promo",
                f"{HOST}/home",
                "Home | Disney+",
                _doc(
                    el(
                        "div",
                        el("h2", text="Special Offer"),
                        el("p", text="Upgrade to the annual plan and save."),
                        el("button", id="close-promo", classes="btn", text="No thanks"),
                        classes="promo-modal",
                        attrs={"role": "dialog"},
                    )
                ),
            )
        )
        interstitials.append(Interstitial("promo", "home", 1.0, "#close-promo"))
    app = SimApp(
        pages={p.page_id: p for p in pages},
        transitions=tuple(transitions),
        initial_page="login",
        interstitials=tuple(interstitials),
        dynamics=(Dynamic("playback", "video#player", "currenttime", 1.0, "paused", "false"),),
        seed=cfg.seed,
        name="espn",
    )
    if cfg.pin_required:
        app = apply_drift(app, DriftOp("require_pin", "profiles"))
    return app


# --------------------------------------------------------------------------
# Fixture format
# --------------------------------------------------------------------------


def _page_from_dict(d: Mapping[str, Any]) -> SimPage:
    return SimPage(d["page_id"], d["url"], d.get("title", ""), dom_from_dict(d["root"]))


def app_to_dict(app: SimApp) -> dict[str, Any]:
    return {
        "name": app.name,
        "seed": app.seed,
        "tick_ms": app.tick_ms,
        "initial_page": app.initial_page,
        "pages": [
            {"page_id": p.page_id, "url": p.url, "title": p.title, "root": dom_to_dict(p.root)}
            for p in app.pages.values()
        ],
        "transitions": [
            {"page_id": t.page_id, "selector": t.selector, "op": t.op, "goto": t.goto, "sets": [list(s) for s in t.sets]}
            for t in app.transitions
        ],
        "interstitials": [
            {"page_id": i.page_id, "before": i.before, "probability": i.probability, "dismiss_selector": i.dismiss_selector}
            for i in app.interstitials
        ],
        "dynamics": [
            {
                "page_id": d.page_id,
                "selector": d.selector,
                "attribute": d.attribute,
                "delta": d.delta,
                "when_attribute": d.when_attribute,
                "when_value": d.when_value,
            }
            for d in app.dynamics
        ],
        "reveals": [
            {
                "page_id": r.page_id,
                "after_ticks": r.after_ticks,
                "selector": r.selector,
                "text": r.text,
                "attribute": r.attribute,
                "value": r.value,
            }
            for r in app.reveals
        ],
    }


def app_from_dict(data: Mapping[str, Any]) -> SimApp:
    pages = [_page_from_dict(p) for p in data["pages"]]
    return SimApp(
        pages={p.page_id: p for p in pages},
        transitions=tuple(
            Transition(t["page_id"], t["selector"], t["op"], t.get("goto"), tuple(tuple(s) for s in t.get("sets", ())))
            for t in data.get("transitions", ())
        ),
        initial_page=data["initial_page"],
        interstitials=tuple(Interstitial(**i) for i in data.get("interstitials", ())),
        dynamics=tuple(Dynamic(**d) for d in data.get("dynamics", ())),
        reveals=tuple(Reveal(**r) for r in data.get("reveals", ())),
        seed=int(data.get("seed", 0)),
        tick_ms=int(data.get("tick_ms", 100)),
        name=data.get("name", "sim"),
    )


def load_app(path: str | Path) -> SimApp:
    return app_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_app(app: SimApp, path: str | Path) -> None:
    Path(path).write_text(json.dumps(app_to_dict(app), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def page_fingerprints(app: SimApp) -> dict[str, str]:
    """Canonical DOM bytes per page, for drift-locality diffs."""
    return {pid: dom_to_json(p.root) for pid, p in app.pages.items()}


def changed_pages(before: SimApp, after: SimApp) -> set[str]:
    a, b = page_fingerprints(before), page_fingerprints(after)
    return {pid for pid in set(a) | set(b) if a.get(pid) != b.get(pid)}
