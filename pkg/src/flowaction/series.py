"""Byte time series of a flow and packet-interval slicing."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .ingest import Flow


class SeriesType(Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"
    COMPLETE = "complete"

    @classmethod
    def parse(cls, text: str) -> "SeriesType":
        aliases = {"in": "incoming", "out": "outgoing"}
        name = text.strip().lower()
        return cls(aliases.get(name, name))


@dataclass(frozen=True)
class Interval:
    """1-based inclusive packet interval ``[x, y]``."""

    x: int
    y: int

    def __post_init__(self):
        if not 1 <= self.x <= self.y:
            raise ValueError(f"invalid interval [{self.x},{self.y}]")

    def __str__(self) -> str:
        return f"[{self.x},{self.y}]"


def complete_series(flow: Flow) -> list[int]:
    """Signed packet sizes in time order; incoming bytes are negative."""
    return [p.size if flow.is_outgoing(p) else -p.size for p in flow.packets]


def split_complete(complete: Sequence[int], kind: SeriesType) -> list[int]:
    """Derive any series kind from a complete series."""
    if kind is SeriesType.COMPLETE:
        return list(complete)
    if kind is SeriesType.OUTGOING:
        return [v for v in complete if v > 0]
    return [-v for v in complete if v < 0]


def to_series(flow: Flow, kind: SeriesType) -> list[int]:
    return split_complete(complete_series(flow), kind)


def slice_interval(series: Sequence[int], interval: Interval) -> list[int]:
    """Elements ``x..y`` (1-based, inclusive); truncated when the series is short."""
    return list(series[interval.x - 1:interval.y])
