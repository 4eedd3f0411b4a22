"""Synthesis backend over a generic chat-completion HTTP endpoint.

Wire format: the request body is ``{model, temperature, messages}``; the
response must carry the reply text (``output_text``, ``output`` or
``choices[0].message.content``) and token counts (``usage.input_tokens`` /
``usage.output_tokens``, or the ``prompt_tokens`` / ``completion_tokens``
spelling). Prompts are plain-text templates shipped with the package.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Any, Mapping

import httpx

from ..page_model import PageSnapshot, iter_nodes, stable_selector
from ..repo import TokenUsage
from .pipeline import BackendError, MalformedOutput, SynthesisRequest
from .som import marked_nodes, render_outline

__all__ = ["ChatConfig", "ChatBackend", "chat_backend", "load_template", "render_template", "extract_json"]

TEMPERATURE = 0.2
KEY_ENV = "NETGENT_LLM_KEY"


def load_template(step: str) -> str:
    return resources.files(__package__).joinpath("prompts", f"{step}.txt").read_text(encoding="utf-8")


def render_template(template: str, values: Mapping[str, str]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", value)
    return out


def extract_json(text: str) -> Any:
    """First JSON object in ``text``; tolerates prose or code fences around it."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text, start)
            return value
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
    raise ValueError("no JSON object in reply")


@dataclass(frozen=True)
class ChatConfig:
    endpoint: str
    api_key: str
    model: str = "default"
    timeout_s: float = 120.0
    multimodal: bool = False

    @classmethod
    def from_env(cls, endpoint: str | None, environ: Mapping[str, str] | None = None, **kwargs: Any) -> ChatConfig:
        env = os.environ if environ is None else environ
        key = env.get(KEY_ENV, "")
        if not endpoint:
            raise ValueError("chat backend needs llm.endpoint")
        if not key:
            raise ValueError(f"chat backend needs {KEY_ENV}")
        return cls(endpoint=endpoint, api_key=key, **kwargs)


def _rules(req: SynthesisRequest) -> str:
    lines = []
    for st in req.workflow.states:
        kind = "end" if st.is_end else "rule"
        line = f"- {st.name} ({kind}): when {st.trigger_prose}"
        if st.action_prose:
            line += f"; then {st.action_prose}"
        lines.append(line)
    return "\n".join(lines)


class ChatBackend:
    """Stateless between calls, so concurrent runs may share one instance."""

    def __init__(self, config: ChatConfig, client: httpx.Client | None = None) -> None:
        self.config = config
        self._client = client
        self.templates = {step: load_template(step) for step in ("observe", "select", "generate", "decompose")}

    def _post(self, messages: list[dict[str, Any]]) -> tuple[str, TokenUsage]:
        body = {"model": self.config.model, "temperature": TEMPERATURE, "messages": messages}
        headers = {"Authorization": f"Bearer {self.config.api_key}"}
        try:
            if self._client is not None:
                resp = self._client.post(self.config.endpoint, json=body, headers=headers)
            else:
                resp = httpx.post(self.config.endpoint, json=body, headers=headers, timeout=self.config.timeout_s)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if resp.status_code >= 400:
            excerpt = resp.text[:500]
            raise BackendError(f"HTTP {resp.status_code}: {excerpt}", status=resp.status_code, body=excerpt)
        try:
            data = resp.json()
        except ValueError:
            raise BackendError("response is not JSON", status=resp.status_code, body=resp.text[:500]) from None
        return _reply_text(data), _reply_usage(data)

    def _ask(self, context: list[dict[str, Any]], prompt: str) -> tuple[Any, TokenUsage]:
        text, usage = self._post(context + [{"role": "user", "content": prompt}])
        try:
            return extract_json(text), usage
        except ValueError as exc:
            raise MalformedOutput(str(exc), usage) from None

    def _fill(self, step: str, req: SynthesisRequest, state: str = "", feedback: str | None = None) -> str:
        action = req.workflow.state(state).action_prose if state else ""
        fb = f"\nYour previous answer was rejected: {feedback}\n" if feedback else ""
        return render_template(self.templates[step], {"state": state, "action": action, "feedback": fb})

    # -- Synthesizer -------------------------------------------------------

    def observe(self, req: SynthesisRequest, marked: PageSnapshot) -> tuple[Any, TokenUsage]:
        text = render_template(
            self.templates["observe"],
            {"rules": _rules(req), "history": ", ".join(req.history) or "(none)", "snapshot": render_outline(marked)},
        )
        content: Any = text
        if self.config.multimodal and marked.attachment:
            content = [{"type": "text", "text": text}, {"type": "image", "data": marked.attachment}]
        return {"messages": [{"role": "system", "content": content}], "marked": marked}, TokenUsage()

    def select(self, req: SynthesisRequest, context: Any, feedback: str | None) -> tuple[str, TokenUsage]:
        reply, usage = self._ask(context["messages"], self._fill("select", req, feedback=feedback))
        if not isinstance(reply, Mapping) or not isinstance(reply.get("state"), str):
            raise MalformedOutput('expected {"state": name}', usage)
        return reply["state"], usage

    def generate(self, req: SynthesisRequest, context: Any, state: str, feedback: str | None):
        reply, usage = self._ask(context["messages"], self._fill("generate", req, state, feedback))
        sets = reply.get("detector_sets") if isinstance(reply, Mapping) else None
        if not isinstance(sets, list):
            raise MalformedOutput('expected {"detector_sets": [...]}', usage)
        return sets, usage

    def decompose(self, req: SynthesisRequest, context: Any, state: str, feedback: str | None):
        reply, usage = self._ask(context["messages"], self._fill("decompose", req, state, feedback))
        items = reply.get("instructions") if isinstance(reply, Mapping) else None
        if not isinstance(items, list):
            raise MalformedOutput('expected {"instructions": [...]}', usage)
        marks = marked_nodes(context["marked"])
        raw_nodes = {n.node_index: n for n in iter_nodes(req.snapshot.root)}
        out = []
        for item in items:
            if not isinstance(item, Mapping):
                raise MalformedOutput("instruction must be an object", usage)
            ins = dict(item)
            if "mark" in ins:
                mark = ins.pop("mark")
                node = marks.get(mark) if isinstance(mark, int) else None
                if node is None:
                    raise MalformedOutput(f"mark {mark!r} does not exist on this page", usage)
                try:
                    ins["selector"] = str(stable_selector(req.snapshot.root, raw_nodes[node.node_index]))
                except ValueError as exc:
                    raise MalformedOutput(f"mark {mark}: {exc}", usage) from None
            out.append(ins)
        return {"version": 1, "instructions": out}, usage


def _reply_text(data: Any) -> str:
    if isinstance(data, Mapping):
        for key in ("output_text", "output"):
            if isinstance(data.get(key), str):
                return data[key]
        choices = data.get("choices")
        if isinstance(choices, list) and choices:
            msg = choices[0].get("message", {}) if isinstance(choices[0], Mapping) else {}
            if isinstance(msg.get("content"), str):
                return msg["content"]
    raise BackendError("response has no output text")


def _reply_usage(data: Mapping[str, Any]) -> TokenUsage:
    usage = data.get("usage") or {}
    inp = usage.get("input_tokens", usage.get("prompt_tokens", 0))
    out = usage.get("output_tokens", usage.get("completion_tokens", 0))
    try:
        return TokenUsage(int(inp), int(out))
    except (TypeError, ValueError):
        raise BackendError(f"bad usage block {usage!r}") from None


def chat_backend(config: ChatConfig | None = None, *, endpoint: str | None = None, **kwargs: Any) -> ChatBackend:
    """Build a chat backend; without a config, endpoint comes from the argument and the key from the env."""
    if config is None:
        config = ChatConfig.from_env(endpoint, **kwargs)
    return ChatBackend(config)
