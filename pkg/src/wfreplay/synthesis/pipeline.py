"""One-shot state synthesis: Observe, Select, Generate, Decompose.

A backend supplies the four steps; this module owns retries, the token
budget, and the local gate that every generated detector set must match
the snapshot that triggered synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from ..actions import ActionProgram, FormatError, program_from_dict
from ..detectors import DetectorSet, detector_set_from_list, match_detector_set
from ..environment import StepResult
from ..page_model import PageSnapshot
from ..repo import ConcreteState, TokenUsage
from ..workflow import AbstractWorkflow
from .som import MARK_ATTR, assign_som_marks

__all__ = [
    "DEFAULT_TOKEN_BUDGET",
    "SynthesisRequest",
    "SynthesisResult",
    "StepRecord",
    "Synthesizer",
    "SynthesisError",
    "SelectionError",
    "DetectorRejected",
    "ProgramRejected",
    "BackendError",
    "BudgetExceeded",
    "MalformedOutput",
    "synthesize",
]

DEFAULT_TOKEN_BUDGET = 150_000


class SynthesisError(Exception):
    """Base class; ``usage`` holds the tokens spent before the failure."""

    def __init__(self, message: str, usage: TokenUsage | None = None) -> None:
        super().__init__(message)
        self.usage = usage or TokenUsage()


class SelectionError(SynthesisError):
    pass


class DetectorRejected(SynthesisError):
    pass


class ProgramRejected(SynthesisError):
    pass


class BudgetExceeded(SynthesisError):
    pass


class BackendError(SynthesisError):
    def __init__(self, message: str, usage: TokenUsage | None = None, status: int | None = None, body: str = "") -> None:
        super().__init__(message, usage)
        self.status = status
        self.body = body


class MalformedOutput(Exception):
    """Raised by a backend step whose output cannot be used; the step is retried once."""

    def __init__(self, message: str, usage: TokenUsage | None = None) -> None:
        super().__init__(message)
        self.usage = usage or TokenUsage()


@dataclass(frozen=True)
class SynthesisRequest:
    workflow: AbstractWorkflow
    snapshot: PageSnapshot
    last_transition: tuple[str, StepResult] | None = None
    history: tuple[str, ...] = ()
    target_state: str | None = None  # set when regenerating a known state after drift

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        if len(self.history) > self.workflow.max_steps:
            raise ValueError("history longer than max_steps")
        if self.target_state is not None and self.target_state not in self.workflow:
            raise ValueError(f"unknown target state {self.target_state!r}")

    @property
    def marked_snapshot(self) -> PageSnapshot:
        return assign_som_marks(self.snapshot)


@dataclass(frozen=True)
class StepRecord:
    step: str
    attempt: int
    usage: TokenUsage
    detail: str = ""


@dataclass(frozen=True)
class SynthesisResult:
    selected_state: str
    concrete: ConcreteState
    usage: TokenUsage
    steps_log: tuple[StepRecord, ...] = field(default_factory=tuple)


class Synthesizer(Protocol):
    """Each step returns ``(payload, usage)`` or raises MalformedOutput / BackendError.

    ``feedback`` is None on the first attempt and describes the previous
    failure on the retry.
    """

    def observe(self, req: SynthesisRequest, marked: PageSnapshot) -> tuple[Any, TokenUsage]: ...

    def select(self, req: SynthesisRequest, context: Any, feedback: str | None) -> tuple[str, TokenUsage]: ...

    def generate(
        self, req: SynthesisRequest, context: Any, state: str, feedback: str | None
    ) -> tuple[Sequence[Sequence[dict]], TokenUsage]: ...

    def decompose(
        self, req: SynthesisRequest, context: Any, state: str, feedback: str | None
    ) -> tuple[dict, TokenUsage]: ...


class _Ledger:
    def __init__(self, budget: int) -> None:
        self.budget = budget
        self.usage = TokenUsage()
        self.records: list[StepRecord] = []

    def charge(self, step: str, attempt: int, usage: TokenUsage, detail: str = "") -> None:
        self.usage = self.usage + usage
        self.records.append(StepRecord(step, attempt, usage, detail))
        if self.usage.total > self.budget:
            raise BudgetExceeded(
                f"synthesis spent {self.usage.total} tokens, over the {self.budget} budget", self.usage
            )


def _uses_marks(ds: DetectorSet) -> bool:
    for d in ds.detectors:
        for sel in (d.selector, d.subtree_of):
            if sel is not None and any(name == MARK_ATTR for s in sel.steps for name, _ in s.attributes):
                return True
    return False


def _parse_detector_sets(raw: Any, snap: PageSnapshot) -> tuple[DetectorSet, ...]:
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ValueError("expected a non-empty list of detector sets")
    sets = tuple(detector_set_from_list(item) for item in raw)
    for i, ds in enumerate(sets):
        if _uses_marks(ds):
            raise ValueError(f"detector set {i} relies on {MARK_ATTR}, which is not stable")
        res = match_detector_set(ds, snap)
        if not res.matched:
            raise ValueError(f"detector set {i} does not match the current page (detector {res.required_failed} failed)")
    return sets


def _call(ledger: _Ledger, step: str, attempt: int, fn, *args):
    try:
        payload, usage = fn(*args)
    except MalformedOutput as exc:
        ledger.charge(step, attempt, exc.usage, f"malformed: {exc}")
        return None, str(exc)
    except BackendError as exc:
        exc.usage = ledger.usage + exc.usage
        raise
    ledger.charge(step, attempt, usage)
    return payload, None


def synthesize(
    req: SynthesisRequest, backend: Synthesizer, *, token_budget: int = DEFAULT_TOKEN_BUDGET
) -> SynthesisResult:
    """Compile the state for ``req.snapshot`` into an unstored ConcreteState."""
    ledger = _Ledger(token_budget)
    wf = req.workflow
    try:
        return _synthesize(req, backend, ledger, wf)
    except SynthesisError as exc:
        if exc.usage.total < ledger.usage.total:
            exc.usage = ledger.usage
        raise


def _synthesize(req: SynthesisRequest, backend: Synthesizer, ledger: _Ledger, wf: AbstractWorkflow) -> SynthesisResult:
    marked = req.marked_snapshot
    context, err = _call(ledger, "observe", 1, backend.observe, req, marked)
    if err is not None:
        raise BackendError(f"observe failed: {err}", ledger.usage)

    feedback = None
    name = None
    for attempt in (1, 2):
        chosen, err = _call(ledger, "select", attempt, backend.select, req, context, feedback)
        if err is None:
            if not isinstance(chosen, str) or chosen not in wf:
                err = f"{chosen!r} is not a state of this workflow; choose one of {[s.name for s in wf.states]}"
            elif req.target_state is not None and chosen != req.target_state:
                err = f"this page must be handled by state {req.target_state!r}, not {chosen!r}"
        if err is None:
            name = chosen
            break
        feedback = err
    if name is None:
        raise SelectionError(feedback or "no state selected", ledger.usage)

    feedback = None
    detector_sets = None
    for attempt in (1, 2):
        raw, err = _call(ledger, "generate", attempt, backend.generate, req, context, name, feedback)
        if err is None:
            try:
                detector_sets = _parse_detector_sets(raw, req.snapshot)
                break
            except ValueError as exc:
                err = str(exc)
                ledger.records.append(StepRecord("generate", attempt, TokenUsage(), f"rejected: {err}"))
        feedback = err
    if detector_sets is None:
        raise DetectorRejected(f"detectors for {name!r} rejected twice: {feedback}", ledger.usage)

    program: ActionProgram | None = None
    if not wf.state(name).is_end:
        feedback = None
        for attempt in (1, 2):
            raw, err = _call(ledger, "decompose", attempt, backend.decompose, req, context, name, feedback)
            if err is None:
                try:
                    program = program_from_dict(raw)
                    break
                except (FormatError, ValueError) as exc:
                    err = str(exc)
                    ledger.records.append(StepRecord("decompose", attempt, TokenUsage(), f"rejected: {err}"))
            feedback = err
        if program is None:
            raise ProgramRejected(f"program for {name!r} rejected twice: {feedback}", ledger.usage)

    concrete = ConcreteState(
        workflow_id=wf.workflow_id,
        abstract_name=name,
        detector_sets=detector_sets,
        program=program,
        synthesis_tokens=ledger.usage,
    )
    return SynthesisResult(name, concrete, ledger.usage, tuple(ledger.records))
