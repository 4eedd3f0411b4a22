"""State synthesis: pipeline, backends, Set-of-Mark view and cost model."""

from __future__ import annotations

from .chat import ChatBackend, ChatConfig, chat_backend
from .cost import DEFAULT_COST_MODEL, CostModel, cost, dollars
from .oracle import OracleBackend, split_tokens
from .pipeline import (
    DEFAULT_TOKEN_BUDGET,
    BackendError,
    BudgetExceeded,
    DetectorRejected,
    MalformedOutput,
    ProgramRejected,
    SelectionError,
    SynthesisError,
    SynthesisRequest,
    SynthesisResult,
    Synthesizer,
    synthesize,
)
from .som import assign_som_marks, marked_nodes, render_outline

__all__ = [
    "ChatBackend",
    "ChatConfig",
    "chat_backend",
    "CostModel",
    "DEFAULT_COST_MODEL",
    "cost",
    "dollars",
    "OracleBackend",
    "split_tokens",
    "DEFAULT_TOKEN_BUDGET",
    "BackendError",
    "BudgetExceeded",
    "DetectorRejected",
    "MalformedOutput",
    "ProgramRejected",
    "SelectionError",
    "SynthesisError",
    "SynthesisRequest",
    "SynthesisResult",
    "Synthesizer",
    "synthesize",
    "assign_som_marks",
    "marked_nodes",
    "render_outline",
]
