"""Deterministic fixture-driven synthesis backend.

An oracle book describes, per abstract state, how to recognize its page and
which gestures to perform. Gestures name their targets by descriptive
features (tag, text, attributes) rather than by selector; the selector is
derived from the live snapshot at Decompose time, so renamed ids or classes
on the page yield fresh, working selectors.

Book layout::

    {
      "workflow_id": "espn",
      "default_tokens": 42600,
      "states": {
        "login": {
          "tokens": 71080,
          "recognize": [{"kind": "url", "required": true, "glob": "*/login"}, ...],
          "steps": [
            {"op": "type_text", "target": {"tag": "input", "attributes": {"name": "email"}}, "text": "${USER}"},
            {"op": "click", "target": {"tag": "button", "text": "Log In"}}
          ]
        }
      }
    }

``recognize`` is either one detector set (a list of detector objects) or a
list of such sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..detectors import detector_set_from_list, match_detector_set
from ..page_model import DomNode, PageSnapshot, iter_nodes, stable_selector
from ..repo import TokenUsage
from .pipeline import MalformedOutput, SynthesisRequest

__all__ = ["OracleBackend", "split_tokens", "load_book", "STEP_SHARES", "END_STEP_SHARES"]

# Percent of a state's token cost charged to each pipeline step.
STEP_SHARES = {"observe": 10, "select": 10, "generate": 30, "decompose": 50}
END_STEP_SHARES = {"observe": 10, "select": 10, "generate": 80}
INPUT_FRACTION = (4, 5)


def split_tokens(total: int, shares: Mapping[str, int]) -> dict[str, TokenUsage]:
    """Divide ``total`` over steps by percentage; the last step absorbs rounding."""
    if total < 0:
        raise ValueError("total must be non-negative")
    if sum(shares.values()) != 100:
        raise ValueError("shares must add up to 100")
    names = list(shares)
    amounts = [total * shares[n] // 100 for n in names[:-1]]
    amounts.append(total - sum(amounts))
    num, den = INPUT_FRACTION
    return {n: TokenUsage(a * num // den, a - a * num // den) for n, a in zip(names, amounts)}


def load_book(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _sets(recognize: Any) -> list[list[dict]]:
    if not isinstance(recognize, list) or not recognize:
        raise ValueError("recognize must be a non-empty list")
    if isinstance(recognize[0], Mapping):
        return [list(recognize)]
    return [list(s) for s in recognize]


def _target_matches(node: DomNode, target: Mapping[str, Any]) -> bool:
    if "tag" in target and node.tag != target["tag"]:
        return False
    if "id" in target and node.id != target["id"]:
        return False
    if any(c not in node.classes for c in target.get("classes", ())):
        return False
    for name, value in target.get("attributes", {}).items():
        if node.get(name) != value:
            return False
    if "text" in target and node.text != target["text"]:
        return False
    return True


@dataclass
class OracleBackend:
    book: Mapping[str, Any]
    tokens_per_state: int | None = None
    # overrides per state, applied after tokens_per_state
    state_tokens: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> OracleBackend:
        return cls(load_book(path), **kwargs)

    def _entry(self, name: str) -> Mapping[str, Any]:
        try:
            return self.book["states"][name]
        except KeyError:
            raise MalformedOutput(f"oracle book has no entry for {name!r}") from None

    def cost_of(self, name: str) -> int:
        if name in self.state_tokens:
            return int(self.state_tokens[name])
        if self.tokens_per_state is not None:
            return int(self.tokens_per_state)
        entry = self.book.get("states", {}).get(name, {})
        return int(entry.get("tokens", self.book.get("default_tokens", 0)))

    def _charge(self, req: SynthesisRequest, name: str, step: str) -> TokenUsage:
        is_end = req.workflow.state(name).is_end
        return split_tokens(self.cost_of(name), END_STEP_SHARES if is_end else STEP_SHARES)[step]

    def _recognizes(self, name: str, snap: PageSnapshot) -> bool:
        entry = self.book.get("states", {}).get(name)
        if entry is None:
            return False
        return any(match_detector_set(detector_set_from_list(s), snap).matched for s in _sets(entry["recognize"]))

    def _guess(self, req: SynthesisRequest) -> str | None:
        if req.target_state is not None:
            return req.target_state
        for st in req.workflow.states:
            if self._recognizes(st.name, req.snapshot):
                return st.name
        return None

    # -- Synthesizer -------------------------------------------------------

    def observe(self, req: SynthesisRequest, marked: PageSnapshot) -> tuple[Any, TokenUsage]:
        name = self._guess(req)
        usage = self._charge(req, name, "observe") if name is not None else TokenUsage()
        return {"guess": name, "snapshot": marked}, usage

    def select(self, req: SynthesisRequest, context: Any, feedback: str | None) -> tuple[str, TokenUsage]:
        name = context["guess"]
        if name is None:
            raise MalformedOutput(f"no oracle state recognizes {req.snapshot.url}")
        return name, self._charge(req, name, "select")

    def generate(self, req: SynthesisRequest, context: Any, state: str, feedback: str | None):
        entry = self._entry(state)
        return _sets(entry["recognize"]), self._charge(req, state, "generate")

    def decompose(self, req: SynthesisRequest, context: Any, state: str, feedback: str | None):
        entry = self._entry(state)
        root = req.snapshot.root
        instructions = []
        for step in entry.get("steps", ()):
            ins = {k: v for k, v in step.items() if k != "target"}
            if "target" in step:
                node = next((n for n in iter_nodes(root) if _target_matches(n, step["target"])), None)
                if node is None:
                    raise MalformedOutput(f"{state}: no element fits target {step['target']}")
                ins["selector"] = str(stable_selector(root, node))
            instructions.append(ins)
        return {"version": 1, "instructions": instructions}, self._charge(req, state, "decompose")
