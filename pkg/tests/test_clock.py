from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntpsim.clock import (Adjustment, ClockError, SimClock, Thresholds, TimestampQuad, classify_offset,
                          compute_delay, compute_offset)

EPS = Fraction(1, 10 ** 9)


def exchange(omega, d_out, d_back, proc=Fraction(1, 1000), send=Fraction(500)):
    """Timestamps of one query/response when the client runs `omega` ahead of the server."""
    t1 = send + omega
    t2 = send + d_out
    t3 = t2 + proc
    t4 = t3 + d_back + omega
    return TimestampQuad(t1, t2, t3, t4)


fractions = st.fractions(min_value=-5000, max_value=5000, max_denominator=10 ** 6)
delays = st.fractions(min_value=0, max_value=2, max_denominator=10 ** 6)


class TestOffsetDelay:
    def test_worked_example(self):
        q = TimestampQuad(Fraction(100), Fraction(101), Fraction(102), Fraction(105))
        assert compute_offset(q) == Fraction(-1)
        assert compute_delay(q) == Fraction(4)

    @given(fractions, delays, delays)
    def test_recovers_injected_offset_and_delay_when_symmetric(self, omega, d, proc):
        q = exchange(omega, d, d, proc)
        assert compute_offset(q) == -omega
        assert compute_delay(q) == 2 * d

    @given(fractions, delays, delays)
    def test_asymmetry_error_is_half_the_difference(self, omega, d_out, d_back):
        q = exchange(omega, d_out, d_back)
        assert compute_offset(q) == -omega + (d_out - d_back) / 2
        assert compute_delay(q) == d_out + d_back


class TestClassify:
    @pytest.mark.parametrize("theta, expected", [
        (0, Adjustment.SLEW),
        (Fraction(1, 8), Adjustment.SLEW),
        (-Fraction(1, 8), Adjustment.SLEW),
        (Fraction(1, 8) + EPS, Adjustment.STEP),
        (1000, Adjustment.STEP),
        (-1000, Adjustment.STEP),
        (1000 + EPS, Adjustment.PANIC),
        (-1000 - EPS, Adjustment.PANIC),
        (1500, Adjustment.PANIC),
    ])
    def test_boundaries(self, theta, expected):
        assert classify_offset(Fraction(theta)) is expected

    def test_custom_thresholds(self):
        th = Thresholds(Fraction(1), Fraction(10))
        assert classify_offset(Fraction(1), th) is Adjustment.SLEW
        assert classify_offset(Fraction(11), th) is Adjustment.PANIC

    def test_thresholds_must_be_ordered(self):
        with pytest.raises(ValueError):
            Thresholds(Fraction(5), Fraction(5))
        with pytest.raises(ValueError):
            Thresholds(Fraction(0), Fraction(5))

    @given(fractions)
    def test_symmetric_in_sign(self, theta):
        assert classify_offset(theta) is classify_offset(-theta)


class TestSimClock:
    def test_reading_adds_offset(self):
        c = SimClock(Fraction(3, 10))
        assert c.reading(10) == c.epoch_base + Fraction(103, 10)

    def test_adjust_accumulates(self):
        c = SimClock(Fraction(1, 2))
        c.adjust(Fraction(-1, 2))
        assert c.offset == 0
        assert c.now(0).seconds == c.epoch_base

    def test_negative_time_refused(self):
        with pytest.raises(ClockError):
            SimClock().now(-1)

    def test_reading_before_epoch_refused(self):
        with pytest.raises(ClockError):
            SimClock(Fraction(-10), epoch_base=0).now(1)
