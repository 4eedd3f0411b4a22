"""Token-to-dollar conversion.

Rates are dollars per million tokens and are held as Decimals so report
arithmetic is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Union

from ..repo import TokenUsage

__all__ = ["CostModel", "cost", "dollars", "DEFAULT_COST_MODEL", "MILLION"]

MILLION = Decimal(1_000_000)
Rate = Union[Decimal, float, int, str]


def _dec(x: Rate) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


@dataclass(frozen=True)
class CostModel:
    input_rate: Decimal = Decimal("0.35")
    output_rate: Decimal = Decimal("0.35")
    blended_rate: Decimal | None = Decimal("0.35")

    def __post_init__(self) -> None:
        for name in ("input_rate", "output_rate", "blended_rate"):
            value = getattr(self, name)
            if value is None:
                continue
            value = _dec(value)
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, value)

    @classmethod
    def blended(cls, rate: Rate) -> CostModel:
        r = _dec(rate)
        return cls(r, r, r)

    @classmethod
    def split(cls, input_rate: Rate, output_rate: Rate) -> CostModel:
        return cls(_dec(input_rate), _dec(output_rate), None)


DEFAULT_COST_MODEL = CostModel.blended("0.35")


def dollars(tokens: int, rate: Rate) -> Decimal:
    return Decimal(tokens) * _dec(rate) / MILLION


def cost(usage: TokenUsage, m: CostModel = DEFAULT_COST_MODEL) -> Decimal:
    """Blended rate over the total when set, else input and output priced separately."""
    if m.blended_rate is not None:
        return dollars(usage.total, m.blended_rate)
    return dollars(usage.input_tokens, m.input_rate) + dollars(usage.output_tokens, m.output_rate)
