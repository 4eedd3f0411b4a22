"""Cost and drift reports built from run traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Sequence

from .controller import RunTrace
from .repo import TokenUsage
from .synthesis.cost import dollars

__all__ = ["RunCost", "CostReport", "CostScenario", "DriftReport", "cost_report", "cost_scenario"]


@dataclass(frozen=True)
class RunCost:
    index: int
    seed: int
    tokens: TokenUsage
    dollars: Decimal
    hits: int
    misses: int
    outcome: str


@dataclass(frozen=True)
class CostReport:
    per_run: tuple[RunCost, ...]
    scenario: str = ""
    runs: int = field(init=False)
    total_tokens: TokenUsage = field(init=False)
    total_dollars: Decimal = field(init=False)
    hit_rate: float = field(init=False)

    def __post_init__(self) -> None:
        hits = sum(r.hits for r in self.per_run)
        lookups = hits + sum(r.misses for r in self.per_run)
        object.__setattr__(self, "runs", len(self.per_run))
        object.__setattr__(self, "total_tokens", TokenUsage.sum(r.tokens for r in self.per_run))
        object.__setattr__(self, "total_dollars", sum((r.dollars for r in self.per_run), Decimal(0)))
        object.__setattr__(self, "hit_rate", hits / lookups if lookups else 0.0)

    def lines(self) -> list[str]:
        out = [f"scenario: {self.scenario}"] if self.scenario else []
        for r in self.per_run:
            out.append(
                f"run {r.index} seed={r.seed} {r.outcome}: tokens={r.tokens.total} "
                f"(in {r.tokens.input_tokens}, out {r.tokens.output_tokens}) cost=${r.dollars} "
                f"hits={r.hits} misses={r.misses}"
            )
        out.append(
            f"aggregate: runs={self.runs} tokens={self.total_tokens.total} cost=${self.total_dollars} "
            f"hit_rate={self.hit_rate:.3f}"
        )
        return out


def cost_report(traces: Sequence[RunTrace], scenario: str = "") -> CostReport:
    return CostReport(
        tuple(
            RunCost(i + 1, t.seed, t.totals.tokens, t.totals.cost, t.totals.hits, t.totals.misses, t.outcome)
            for i, t in enumerate(traces)
        ),
        scenario,
    )


@dataclass(frozen=True)
class CostScenario:
    """What-if cost arithmetic at a blended rate R (dollars per million tokens)."""

    per_run: Decimal
    no_cache_total: Decimal
    cold_compile: Decimal
    annual_recompile_all: Decimal
    annual_recompile_cached: Decimal

    def lines(self, runs: int, weeks: int, drifted: int) -> list[str]:
        return [
            f"per_run_cost: ${self.per_run}",
            f"no_cache_total ({runs} runs): ${self.no_cache_total}",
            f"cold_compile: ${self.cold_compile}",
            f"annual_recompile_all ({weeks} weeks): ${self.annual_recompile_all}",
            f"annual_recompile_cached ({drifted} states/week): ${self.annual_recompile_cached}",
        ]


def cost_scenario(
    tokens_per_run: int,
    rate: Decimal | str,
    runs: int,
    states: int,
    tokens_per_state: int,
    weeks: int,
    drifted_states_per_week: int,
) -> CostScenario:
    for name, v in (
        ("tokens_per_run", tokens_per_run),
        ("runs", runs),
        ("states", states),
        ("tokens_per_state", tokens_per_state),
        ("weeks", weeks),
        ("drifted_states_per_week", drifted_states_per_week),
    ):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    if Decimal(rate) < 0:
        raise ValueError("rate must be non-negative")
    per_run = dollars(tokens_per_run, rate)
    return CostScenario(
        per_run=per_run,
        no_cache_total=per_run * runs,
        cold_compile=dollars(states * tokens_per_state, rate),
        annual_recompile_all=dollars(weeks * states * tokens_per_state, rate),
        annual_recompile_cached=dollars(weeks * drifted_states_per_week * tokens_per_state, rate),
    )


@dataclass(frozen=True)
class DriftReport:
    drift: str
    states_regenerated: int
    states_replayed: int
    invalidations: int
    tokens_drift_run: int
    tokens_cold_equivalent: int
    locality_bound: int
    drift_run_outcome: str

    @property
    def ratio(self) -> Decimal:
        if not self.tokens_cold_equivalent:
            return Decimal(0)
        return Decimal(self.tokens_drift_run) / Decimal(self.tokens_cold_equivalent)

    @property
    def within_bound(self) -> bool:
        return self.states_regenerated <= self.locality_bound

    def to_dict(self) -> dict[str, Any]:
        return {
            "drift": self.drift,
            "states_regenerated": self.states_regenerated,
            "states_replayed": self.states_replayed,
            "invalidations": self.invalidations,
            "tokens_drift_run": self.tokens_drift_run,
            "tokens_cold_equivalent": self.tokens_cold_equivalent,
            "ratio": f"{self.ratio:.4f}",
            "locality_bound": self.locality_bound,
            "drift_run_outcome": self.drift_run_outcome,
        }
