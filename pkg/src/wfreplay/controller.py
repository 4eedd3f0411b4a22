"""The runtime loop: observe, look up, replay or synthesize, check for the end.

A run is sequential. Each step starts with an observation; the controller
first asks whether the page is an end state recognizable from workflow
hints, then consults the repository, and only on a miss pays for synthesis.
Execution failures invalidate just the failing state and regenerate it.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Sequence

from .actions import ActionProgram, Navigate, RealismParams, Sleep
from .detectors import MatchResult
from .environment import AdapterError, Environment, StepResult
from .page_model import PageSnapshot, query_selector
from .repo import ConcreteState, Repository, TokenUsage
from .synthesis.cost import DEFAULT_COST_MODEL, CostModel, cost
from .synthesis.pipeline import DEFAULT_TOKEN_BUDGET, SynthesisError, SynthesisRequest, Synthesizer, synthesize
from .workflow import AbstractState, AbstractWorkflow

__all__ = [
    "RunConfig",
    "TraceEvent",
    "RunTotals",
    "RunTrace",
    "Decision",
    "EVENT_KINDS",
    "run_workflow",
    "execute_program",
    "check_end",
    "is_strictly_increasing",
    "hinted_end_state",
    "select_state",
    "recompute_totals",
    "trace_filename",
    "write_trace",
    "read_trace",
]

OBSERVE = "observe"
CACHE_HIT = "cache_hit"
CACHE_MISS = "cache_miss"
SYNTHESIZED = "synthesized"
EXECUTED = "executed"
EXEC_FAILED = "exec_failed"
INVALIDATED = "invalidated"
END_DETECTED = "end_detected"
ABORTED = "aborted"
EVENT_KINDS = (OBSERVE, CACHE_HIT, CACHE_MISS, SYNTHESIZED, EXECUTED, EXEC_FAILED, INVALIDATED, END_DETECTED, ABORTED)

ABORT_MAX_STEPS = "max_steps"
ABORT_RESYNTH = "resynth budget"
ABORT_BACKEND = "backend fatal"
ABORT_LOOP = "loop"
ABORT_NAVIGATION = "navigation"
ABORT_ENVIRONMENT = "environment"


@dataclass(frozen=True)
class RunConfig:
    max_steps: int | None = None  # None: use the workflow's max_steps
    max_resynth_per_state: int = 2
    poll_interval_ms: int = 100
    end_progress_polls: int = 3
    realism: RealismParams = field(default_factory=RealismParams)
    seed: int = 0
    token_budget: int = DEFAULT_TOKEN_BUDGET
    cost_model: CostModel = DEFAULT_COST_MODEL
    loop_limit: int = 3

    def __post_init__(self) -> None:
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.max_resynth_per_state < 0:
            raise ValueError("max_resynth_per_state must be non-negative")
        if self.poll_interval_ms <= 0:
            raise ValueError("poll_interval_ms must be positive")
        if self.end_progress_polls < 2:
            raise ValueError("end_progress_polls must be at least 2 to observe progress")
        if self.token_budget <= 0 or self.loop_limit <= 0:
            raise ValueError("token_budget and loop_limit must be positive")


@dataclass(frozen=True)
class TraceEvent:
    tick: int | float
    kind: str
    abstract_name: str | None = None
    state_id: str | None = None
    tokens: TokenUsage | None = None
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def key(self) -> tuple:
        """Everything except the tick, for comparing runs."""
        return (self.kind, self.abstract_name, self.state_id, self.tokens, self.detail)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "kind": self.kind,
            "abstract_name": self.abstract_name,
            "state_id": self.state_id,
            "tokens": self.tokens.to_dict() if self.tokens is not None else None,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TraceEvent:
        tokens = TokenUsage.from_dict(d["tokens"]) if d.get("tokens") is not None else None
        return cls(d["tick"], d["kind"], d.get("abstract_name"), d.get("state_id"), tokens, d.get("detail", ""))


@dataclass(frozen=True)
class RunTotals:
    steps: int = 0
    hits: int = 0
    misses: int = 0
    synthesized_states: int = 0
    tokens: TokenUsage = field(default_factory=TokenUsage)
    cost: Decimal = Decimal(0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": self.steps,
            "hits": self.hits,
            "misses": self.misses,
            "synthesized_states": self.synthesized_states,
            "tokens": self.tokens.to_dict(),
            "cost": str(self.cost),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunTotals:
        return cls(
            d["steps"], d["hits"], d["misses"], d["synthesized_states"], TokenUsage.from_dict(d["tokens"]), Decimal(d["cost"])
        )


def recompute_totals(events: Iterable[TraceEvent], model: CostModel = DEFAULT_COST_MODEL) -> RunTotals:
    kinds: Counter[str] = Counter()
    tokens = TokenUsage()
    for ev in events:
        kinds[ev.kind] += 1
        if ev.tokens is not None:
            tokens = tokens + ev.tokens
    return RunTotals(kinds[OBSERVE], kinds[CACHE_HIT], kinds[CACHE_MISS], kinds[SYNTHESIZED], tokens, cost(tokens, model))


@dataclass(frozen=True)
class RunTrace:
    workflow_id: str
    seed: int
    events: tuple[TraceEvent, ...]
    totals: RunTotals
    outcome: str  # "completed" or "aborted"
    abort_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "completed"

    def signature(self) -> tuple:
        return tuple(ev.key() for ev in self.events)

    def count(self, kind: str) -> int:
        return sum(1 for ev in self.events if ev.kind == kind)


# --------------------------------------------------------------------------
# Pure decision helpers
# --------------------------------------------------------------------------


def _number(text: str | None) -> float | None:
    if text is None:
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def is_strictly_increasing(values: Sequence[str | float | int | None]) -> bool:
    """True iff there are at least two values, all numeric, each larger than the one before."""
    nums = []
    for v in values:
        if isinstance(v, bool):
            return False
        n = float(v) if isinstance(v, (int, float)) else _number(v)
        if n is None or not math.isfinite(n):
            return False
        nums.append(n)
    return len(nums) >= 2 and all(b > a for a, b in zip(nums, nums[1:]))


def hinted_end_state(w: AbstractWorkflow, snap: PageSnapshot) -> AbstractState | None:
    """End state whose hint selectors (``progress_selector``, ``end_selector``) are all present on the page."""
    for st in w.end_states:
        sels = [st.hints[k] for k in ("progress_selector", "end_selector") if st.hints.get(k)]
        if sels and all(query_selector(snap.root, s) for s in sels):
            return st
    return None


@dataclass(frozen=True)
class Decision:
    action: str  # "replay" or "synthesize"
    state: ConcreteState | None = None
    match: MatchResult | None = None


def select_state(
    candidates: Sequence[tuple[ConcreteState, MatchResult]],
    workflow: AbstractWorkflow,
    snap: PageSnapshot,
    last_transition: tuple[str, StepResult] | None = None,
) -> Decision:
    """Replay the best-ranked cached match, else hand the choice to synthesis.

    ``candidates`` must already be in repository order (score desc, then
    created_at desc, then state_id asc). The last transition only informs
    synthesis, never ranking.
    """
    for cs, res in candidates:
        if cs.abstract_name in workflow:
            return Decision("replay", cs, res)
    return Decision("synthesize")


def execute_program(env: Environment, program: ActionProgram, realism: RealismParams) -> StepResult:
    """Run instructions in order; stop at the first failure."""
    result = None
    for i, ins in enumerate(program.instructions):
        result = env.perform(ins, realism, i)
        if not result.ok:
            return result
    assert result is not None
    return result


def check_end(
    env: Environment,
    end_state: AbstractState,
    cfg: RunConfig,
    snap: PageSnapshot | None = None,
    realization: ConcreteState | None = None,
) -> tuple[bool, list[str | None]]:
    """End detectors match and, given a progress clause, its attribute strictly increases over the polls.

    Returns the verdict and the polled attribute values.
    """
    if snap is None:
        snap = env.observe()
    if realization is not None and realization.best_match(snap) is None:
        return False, []
    clause = end_state.progress_clause
    if clause is None:
        return True, []
    selector, attribute = clause
    values: list[str | None] = []
    for i in range(cfg.end_progress_polls):
        if i:
            env.perform(Sleep(cfg.poll_interval_ms), cfg.realism, 0)
            snap = env.observe()
        nodes = query_selector(snap.root, selector)
        if not nodes:
            return False, values
        values.append(nodes[0].get(attribute))
    return is_strictly_increasing(values), values


# --------------------------------------------------------------------------
# The loop
# --------------------------------------------------------------------------


class _Abort(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class _Run:
    def __init__(
        self, w: AbstractWorkflow, env: Environment, repo: Repository, backend: Synthesizer, cfg: RunConfig
    ) -> None:
        self.w = w
        self.env = env
        self.repo = repo
        self.backend = backend
        self.cfg = cfg
        self.realism = replace(cfg.realism, seed=cfg.seed)
        self.max_steps = cfg.max_steps or w.max_steps
        self.events: list[TraceEvent] = []
        self.tick: int | float = 0
        self.history: list[str] = []
        self.last_transition: tuple[str, StepResult] | None = None
        self.resynth: Counter[str] = Counter()
        self.progress: dict[tuple[str, str], tuple[int, int]] = {}

    def emit(self, kind: str, name: str | None = None, state_id: str | None = None, tokens: TokenUsage | None = None, detail: str = "") -> None:
        self.events.append(TraceEvent(self.tick, kind, name, state_id, tokens, detail))

    def observe(self) -> PageSnapshot:
        snap = self.env.observe()
        self.tick = snap.captured_at
        self.emit(OBSERVE, detail=snap.url)
        return snap

    def abort(self, reason: str, detail: str = "", name: str | None = None, tokens: TokenUsage | None = None) -> _Abort:
        self.emit(ABORTED, name, tokens=tokens, detail=f"{reason}: {detail}" if detail else reason)
        return _Abort(reason)

    def finish(self, outcome: str, reason: str | None = None) -> RunTrace:
        totals = recompute_totals(self.events, self.cfg.cost_model)
        return RunTrace(self.w.workflow_id, self.cfg.seed, tuple(self.events), totals, outcome, reason)

    def run(self) -> RunTrace:
        try:
            self.navigate_to_entry()
            for _ in range(self.max_steps):
                if self.step():
                    return self.finish("completed")
            raise self.abort(ABORT_MAX_STEPS, f"{self.max_steps} steps without reaching an end state")
        except _Abort as exc:
            return self.finish("aborted", exc.reason)
        except AdapterError as exc:
            self.emit(ABORTED, detail=f"{ABORT_ENVIRONMENT}: {exc}")
            return self.finish("aborted", ABORT_ENVIRONMENT)

    def navigate_to_entry(self) -> None:
        try:
            if self.env.observe().url == self.w.entry_url:
                return
        except (AdapterError, ValueError):
            pass  # a fresh browser may sit on a page with no absolute URL
        result = self.env.perform(Navigate(self.w.entry_url), self.realism, 0)
        if not result.ok:
            self.observe()
            raise self.abort(ABORT_NAVIGATION, result.failure.detail if result.failure else "")

    def end_reached(self, st: AbstractState, snap: PageSnapshot, cs: ConcreteState | None = None) -> bool:
        done, values = check_end(self.env, st, self.cfg, snap, cs)
        if done:
            self.tick = self.env.observe().captured_at
            shown = ",".join(str(v) for v in values)
            self.emit(END_DETECTED, st.name, cs.state_id if cs else None, detail=f"progress {shown}" if values else "")
        return done

    def step(self) -> bool:
        """One observe-decide-act round; True when the end state was detected."""
        snap = self.observe()
        hinted = hinted_end_state(self.w, snap)
        if hinted is not None:
            # Recognized from hints alone; a stalled progress clause just means try again next step.
            return self.end_reached(hinted, snap)
        found = self.repo.lookup(self.w.workflow_id, None, snap)
        decision = select_state(found, self.w, snap, self.last_transition)
        if decision.action == "replay":
            cs = decision.state
            assert cs is not None and decision.match is not None
            self.emit(CACHE_HIT, cs.abstract_name, cs.state_id, detail=f"score {decision.match.score}")
        else:
            self.emit(CACHE_MISS, detail=snap.url)
            cs = self.synthesize(snap, None)
        return self.realize(cs, snap)

    def synthesize(self, snap: PageSnapshot, target: str | None) -> ConcreteState:
        req = SynthesisRequest(
            self.w, snap, self.last_transition, tuple(self.history[-self.w.max_steps :]), target_state=target
        )
        try:
            res = synthesize(req, self.backend, token_budget=self.cfg.token_budget)
        except SynthesisError as exc:
            raise self.abort(ABORT_BACKEND, f"{type(exc).__name__}: {exc}", target, exc.usage) from None
        state_id = self.repo.store_state(res.concrete, known_states=[s.name for s in self.w.states])
        self.emit(SYNTHESIZED, res.selected_state, state_id, tokens=res.usage)
        return self.repo.get(self.w.workflow_id, state_id)

    def realize(self, cs: ConcreteState, snap: PageSnapshot) -> bool:
        st = self.w.state(cs.abstract_name)
        if st.is_end or cs.program is None:
            return self.end_reached(st, snap, cs)
        key = (cs.abstract_name, snap.url)
        last = self.progress.get(key)
        repeats = last[1] + 1 if last is not None and last[0] == snap.env_revision else 1
        if repeats > self.cfg.loop_limit:
            raise self.abort(ABORT_LOOP, f"{cs.abstract_name} at {snap.url} made no progress", cs.abstract_name)
        while True:
            assert cs.program is not None
            result = execute_program(self.env, cs.program, self.realism)
            self.tick = result.observed_after.captured_at
            if result.ok:
                self.emit(EXECUTED, cs.abstract_name, cs.state_id, detail=f"{len(cs.program)} instructions")
                self.progress[key] = (result.observed_after.env_revision, repeats)
                self.history.append(cs.abstract_name)
                self.last_transition = (cs.abstract_name, result)
                return False
            f = result.failure
            assert f is not None
            self.emit(EXEC_FAILED, cs.abstract_name, cs.state_id, detail=f"{f.kind} at instruction {f.instruction_index}: {f.detail}")
            cs = self.handle_exec_failure(result, cs)

    def handle_exec_failure(self, failure: StepResult, current: ConcreteState) -> ConcreteState:
        """Invalidate only ``current``, re-observe, and regenerate the same abstract state."""
        name = current.abstract_name
        reason = failure.failure.kind if failure.failure else "failure"
        self.repo.invalidate(current.state_id, reason, self.w.workflow_id)
        self.emit(INVALIDATED, name, current.state_id, detail=reason)
        if self.resynth[name] >= self.cfg.max_resynth_per_state:
            raise self.abort(ABORT_RESYNTH, f"{name} failed after {self.resynth[name]} regenerations", name)
        self.resynth[name] += 1
        snap = self.observe()
        return self.synthesize(snap, name)


def run_workflow(
    w: AbstractWorkflow, env: Environment, repo: Repository, backend: Synthesizer, cfg: RunConfig | None = None
) -> RunTrace:
    """Drive ``w`` to an end state; always returns a trace, aborted runs included."""
    return _Run(w, env, repo, backend, cfg or RunConfig()).run()


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------


def trace_filename(trace: RunTrace, timestamp: str | None = None) -> str:
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    return f"trace-{trace.workflow_id}-{trace.seed}-{timestamp}.jsonl"


def write_trace(trace: RunTrace, directory: str | Path, timestamp: str | None = None) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    path = out / trace_filename(trace, timestamp)
    lines = [json.dumps(ev.to_dict(), ensure_ascii=False) for ev in trace.events]
    summary = {
        "totals": trace.totals.to_dict(),
        "workflow_id": trace.workflow_id,
        "seed": trace.seed,
        "outcome": trace.outcome,
        "abort_reason": trace.abort_reason,
    }
    lines.append(json.dumps(summary, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_trace(path: str | Path) -> RunTrace:
    rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    if not rows or "totals" not in rows[-1]:
        raise ValueError(f"{path}: missing totals line")
    summary = rows[-1]
    events = tuple(TraceEvent.from_dict(r) for r in rows[:-1])
    return RunTrace(
        summary["workflow_id"],
        summary["seed"],
        events,
        RunTotals.from_dict(summary["totals"]),
        summary["outcome"],
        summary.get("abort_reason"),
    )
