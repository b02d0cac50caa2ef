"""Host clocks, on-wire offset/delay arithmetic and offset classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

from .wire import NtpTimestamp, PacketError

# 2020-01-01T00:00:00Z expressed in NTP era-0 seconds.
DEFAULT_EPOCH_BASE = 3786825600

STEP_THRESHOLD = Fraction(1, 8)
PANIC_THRESHOLD = Fraction(1000)


class ClockError(ValueError):
    pass


@dataclass
class SimClock:
    """A host clock: simulated true time plus a constant signed offset.

    Drift is not modelled; the offset only changes through `adjust`.
    """

    offset: Fraction = Fraction(0)
    epoch_base: int = DEFAULT_EPOCH_BASE

    def __post_init__(self):
        self.offset = Fraction(self.offset)

    def reading(self, true_time) -> Fraction:
        """Clock reading in seconds since the NTP epoch."""
        return self.epoch_base + Fraction(true_time) + self.offset

    def now(self, true_time) -> NtpTimestamp:
        if true_time < 0:
            raise ClockError("simulation time cannot be negative")
        try:
            return NtpTimestamp.from_seconds(self.reading(true_time))
        except PacketError as exc:
            raise ClockError(str(exc)) from None

    def adjust(self, delta) -> None:
        self.offset += Fraction(delta)


@dataclass(frozen=True)
class TimestampQuad:
    t1: Fraction
    t2: Fraction
    t3: Fraction
    t4: Fraction


def compute_offset(q: TimestampQuad):
    return ((q.t2 - q.t1) + (q.t3 - q.t4)) / 2


def compute_delay(q: TimestampQuad):
    return (q.t4 - q.t1) - (q.t3 - q.t2)


class Adjustment(str, enum.Enum):
    SLEW = "slew"
    STEP = "step"
    PANIC = "panic"


@dataclass(frozen=True)
class Thresholds:
    step_threshold: Fraction = field(default=STEP_THRESHOLD)
    panic_threshold: Fraction = field(default=PANIC_THRESHOLD)

    def __post_init__(self):
        if not 0 < self.step_threshold < self.panic_threshold:
            raise ValueError("need 0 < step_threshold < panic_threshold")


DEFAULT_THRESHOLDS = Thresholds()


def classify_offset(theta, th: Thresholds = DEFAULT_THRESHOLDS) -> Adjustment:
    magnitude = abs(theta)
    if magnitude <= th.step_threshold:
        return Adjustment.SLEW
    # exactly PANICT is still a step
    if magnitude <= th.panic_threshold:
        return Adjustment.STEP
    return Adjustment.PANIC
