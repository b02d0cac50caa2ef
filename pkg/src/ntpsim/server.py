"""Broadcast/unicast NTP server with per-source Kiss-o'-Death rate limiting."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Deque, Dict, FrozenSet, Optional

from . import wire
from .clock import SimClock
from .simnet import Address, Host, PacketRecord
from .wire import Mode, NtpPacket, SymmetricKey

ECHO_REQUEST = b"ECHO?"
ECHO_REPLY = b"ECHO!"


class RateVerdict(str, enum.Enum):
    OK = "ok"
    VIOLATION = "violation"


@dataclass(frozen=True)
class RateLimitPolicy:
    min_headway: Fraction = Fraction(16)
    burst_allowance: int = 2
    # span over which burst_allowance is counted
    burst_window: Fraction = Fraction(3)

    def __post_init__(self):
        if self.min_headway <= 0:
            raise ValueError("min_headway must be positive")
        if self.burst_allowance < 1:
            raise ValueError("burst_allowance must be at least 1")
        if not 0 < self.burst_window <= self.min_headway:
            raise ValueError("burst_window must be positive and no longer than min_headway")


@dataclass
class _SourceState:
    last_arrival: Fraction
    recent: Deque[Fraction]
    in_violation: bool = False

    @property
    def recent_count(self) -> int:
        return len(self.recent)


@dataclass
class RateLimiter:
    sources: Dict[Address, _SourceState] = field(default_factory=dict)


def rate_check(limiter: RateLimiter, source: Address, arrival_time,
               policy: RateLimitPolicy) -> RateVerdict:
    """Record an arrival and decide whether the source is over its rate.

    More than ``burst_allowance`` arrivals inside ``burst_window`` put the
    source in violation. It stays there until a gap of at least
    ``min_headway`` separates two arrivals.
    """
    arrival_time = Fraction(arrival_time)
    st = limiter.sources.get(source)
    if st is None:
        st = limiter.sources[source] = _SourceState(arrival_time, deque())
    elif arrival_time - st.last_arrival >= policy.min_headway:
        st.recent.clear()
        st.in_violation = False
    st.last_arrival = arrival_time
    st.recent.append(arrival_time)
    while arrival_time - st.recent[0] >= policy.burst_window:
        st.recent.popleft()
    if len(st.recent) > policy.burst_allowance:
        st.in_violation = True
    return RateVerdict.VIOLATION if st.in_violation else RateVerdict.OK


@dataclass
class ServerConfig:
    stratum: int = 2
    broadcast_interval: Optional[Fraction] = Fraction(64)
    broadcast_start: Fraction = Fraction(0)
    broadcast_destination: Optional[Address] = None
    keyring: FrozenSet[SymmetricKey] = frozenset()
    default_key_id: Optional[int] = None
    rate_limit: RateLimitPolicy = field(default_factory=RateLimitPolicy)
    kod_poll_exponent: int = 6
    reference_id: bytes = b"\xc0\x00\x02\x01"

    def __post_init__(self):
        if self.broadcast_interval is not None and self.broadcast_interval <= 0:
            raise ValueError("broadcast_interval must be positive")
        if not 1 <= self.stratum <= 15:
            raise ValueError("server stratum must be within 1..15")

    @property
    def authenticated(self) -> bool:
        return bool(self.keyring)

    def signing_key(self) -> Optional[SymmetricKey]:
        if not self.keyring:
            return None
        keys = sorted(self.keyring, key=lambda k: k.key_id)
        if self.default_key_id is None:
            return keys[0]
        for k in keys:
            if k.key_id == self.default_key_id:
                return k
        raise ValueError(f"default key {self.default_key_id} not in keyring")


class NtpServer(Host):
    """Answers mode 3 queries and, when configured, broadcasts mode 5.

    The upstream synchronization is not simulated: the server's clock is
    taken as correct and its reference timestamp is fixed at start-up.
    """

    def __init__(self, name: str, config: ServerConfig, clock: Optional[SimClock] = None):
        super().__init__(name)
        self.config = config
        self.clock = clock or SimClock()
        self.limiter = RateLimiter()
        self.reference_ts = wire.NULL_TS
        self.broadcasts_sent = 0
        self.kods_sent = 0
        self._first_kod_logged = False

    @property
    def poll_exponent(self) -> int:
        if self.config.broadcast_interval is None:
            return 6
        return max(0, round(math.log2(self.config.broadcast_interval)))

    def start(self) -> None:
        self.reference_ts = self.clock.now(self.now)
        if self.config.broadcast_interval is not None:
            dest = self.config.broadcast_destination
            if dest is None:
                raise ValueError(f"{self.name}: broadcasting needs a destination")
            self.sim.schedule(max(self.config.broadcast_start, self.now), self.on_broadcast_timer,
                              label=f"{self.name} broadcast")

    def _finish(self, pkt: NtpPacket) -> NtpPacket:
        key = self.config.signing_key()
        return wire.sign(pkt, key) if key is not None else pkt

    def on_broadcast_timer(self) -> NtpPacket:
        pkt = self._finish(NtpPacket(
            mode=Mode.BROADCAST,
            stratum=self.config.stratum,
            poll=self.poll_exponent,
            precision=-20,
            reference_id=self.config.reference_id,
            reference_ts=self.reference_ts,
            transmit_ts=self.clock.now(self.now),
        ))
        self.net.send(self, self.config.broadcast_destination, wire.encode(pkt))
        self.broadcasts_sent += 1
        self.sim.call_later(self.config.broadcast_interval, self.on_broadcast_timer,
                            label=f"{self.name} broadcast")
        return pkt

    def receive(self, record: PacketRecord) -> None:
        if record.kind == "echo":
            if record.wire_bytes.startswith(ECHO_REQUEST):
                self.net.send(self, record.claimed_source,
                              ECHO_REPLY + record.wire_bytes[len(ECHO_REQUEST):], kind="echo")
            return
        try:
            pkt = wire.decode(record.wire_bytes)
        except wire.PacketError as exc:
            self.log("drop-malformed", str(exc))
            return
        if pkt.mode == Mode.CLIENT:
            reply = self.on_mode3(pkt, record.claimed_source, record.arrival_time)
            if reply is not None:
                self.net.send(self, record.claimed_source, wire.encode(reply))

    def on_mode3(self, pkt: NtpPacket, source: Address, arrival_time) -> Optional[NtpPacket]:
        """Reply to a client query with mode 4, a RATE KoD, or nothing."""
        if self.config.authenticated:
            status = wire.verify_mac(pkt, self.config.keyring)
            if status is not wire.MacStatus.VALID:
                self.log("drop-auth", f"mode3 from {source}: {status.value}")
                return None
        verdict = rate_check(self.limiter, source, arrival_time, self.config.rate_limit)
        if verdict is RateVerdict.VIOLATION:
            self.kods_sent += 1
            if not self._first_kod_logged:
                self._first_kod_logged = True
                self.log("first-kod", f"first KoD to {source} poll={self.config.kod_poll_exponent} "
                                      f"({2 ** self.config.kod_poll_exponent} s)")
            return self._finish(wire.make_kod(self.config.kod_poll_exponent, pkt.transmit_ts))
        now_ts = self.clock.now(arrival_time)
        return self._finish(NtpPacket(
            mode=Mode.SERVER,
            stratum=self.config.stratum,
            poll=pkt.poll,
            precision=-20,
            reference_id=self.config.reference_id,
            reference_ts=self.reference_ts,
            origin_ts=pkt.transmit_ts,
            receive_ts=now_ts,
            transmit_ts=now_ts,
        ))
