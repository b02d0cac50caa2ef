"""The time-sync-prevention adversary and its sniffing slave.

Three positions are modelled. An off-path attacker on an unauthenticated
network forges everything. An on-path attacker holds the broadcast key and
forges MAC-valid packets. An off-path attacker on an authenticated network
controls a slave inside the broadcast segment, which captures one genuine
mode 5 and one victim mode 3 and forwards the bytes for later replay.

All emission times are pure functions of the schedule, so counts can be
checked against plain arithmetic.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import FrozenSet, List, Optional, Tuple

from . import wire
from .clock import PANIC_THRESHOLD, SimClock
from .simnet import Address, Host, PacketRecord
from .wire import Mode, NtpPacket, NtpTimestamp, SymmetricKey


class AttackRefused(RuntimeError):
    """The attacker lacks the material needed to forge an acceptable packet."""


class CaptureTimeout(RuntimeError):
    pass


class AttackerKind(str, enum.Enum):
    OFF_PATH_UNAUTH = "off_path_unauth"
    ON_PATH_KEYED = "on_path_keyed"
    OFF_PATH_WITH_SLAVE = "off_path_with_slave"


@dataclass
class AttackerPosition:
    kind: AttackerKind = AttackerKind.OFF_PATH_UNAUTH
    slave_host: Optional["Slave"] = None
    keyring: FrozenSet[SymmetricKey] = frozenset()

    def __post_init__(self):
        self.kind = AttackerKind(self.kind)
        if self.kind is AttackerKind.ON_PATH_KEYED and not self.keyring:
            raise ValueError("an on-path keyed attacker needs a keyring")
        if self.kind is AttackerKind.OFF_PATH_WITH_SLAVE:
            if self.slave_host is None:
                raise ValueError("off_path_with_slave needs a slave host")
            if self.keyring:
                raise ValueError("off_path_with_slave attacker cannot hold keys")

    def signing_key(self) -> Optional[SymmetricKey]:
        if not self.keyring:
            return None
        return min(self.keyring, key=lambda k: k.key_id)


@dataclass(frozen=True)
class CapturedPair:
    mode5_copy: bytes
    mode3_copy: bytes
    capture_times: Tuple[Fraction, Fraction]


@dataclass
class AttackSchedule:
    start_time: Fraction
    stop_time: Fraction
    mode5_rate: Fraction = Fraction(1)
    mode3_burst: int = 2
    mode3_interval: Fraction = Fraction(10)
    # the mode 3 flood starts this long after the first mode 5
    mode3_offset: Fraction = Fraction(4)
    displacement: Fraction = Fraction(2000)
    targets: List[Address] = field(default_factory=list)
    server: Optional[Address] = None

    def __post_init__(self):
        for name in ("start_time", "stop_time", "mode5_rate", "mode3_interval", "mode3_offset", "displacement"):
            setattr(self, name, Fraction(getattr(self, name)))
        if not self.start_time < self.stop_time:
            raise ValueError("attack start must precede stop")
        if self.mode5_rate <= 0 or self.mode3_interval <= 0:
            raise ValueError("attack rates must be positive")
        if self.mode3_burst < 0 or self.mode3_offset < 0:
            raise ValueError("mode3 burst and offset must be non-negative")

    @property
    def flood_start(self) -> Fraction:
        return self.start_time + self.mode3_offset


def mode5_emission_times(schedule: AttackSchedule) -> List[Fraction]:
    """Times in [start, stop) spaced 1/rate apart."""
    n = math.ceil((schedule.stop_time - schedule.start_time) * schedule.mode5_rate)
    return [schedule.start_time + Fraction(k) / schedule.mode5_rate for k in range(n)]


def mode3_emission_times(schedule: AttackSchedule) -> List[Fraction]:
    """A back-to-back burst at flood start, then one per interval before stop."""
    t0 = schedule.flood_start
    if t0 >= schedule.stop_time:
        return []
    times = [t0] * schedule.mode3_burst
    k = 1
    while t0 + k * schedule.mode3_interval < schedule.stop_time:
        times.append(t0 + k * schedule.mode3_interval)
        k += 1
    return times


def craft_panic_mode5(server_identity: Address, victim_clock_estimate, key: Optional[SymmetricKey] = None,
                      displacement=Fraction(2000), require_auth: bool = False,
                      stratum: int = 2, poll: int = 6) -> NtpPacket:
    """A mode 5 whose transmit time sits `displacement` seconds behind the victim."""
    if require_auth and key is None:
        raise AttackRefused("network is authenticated and no key is available")
    pkt = NtpPacket(
        mode=Mode.BROADCAST,
        stratum=stratum,
        poll=poll,
        precision=-20,
        reference_id=server_identity.packed,
        transmit_ts=NtpTimestamp.from_seconds(Fraction(victim_clock_estimate) - Fraction(displacement)),
    )
    return wire.sign(pkt, key) if key is not None else pkt


def craft_spoofed_mode3(transmit: NtpTimestamp, key: Optional[SymmetricKey] = None, poll: int = 6) -> NtpPacket:
    pkt = NtpPacket(mode=Mode.CLIENT, leap=3, stratum=16, poll=poll, precision=-20, transmit_ts=transmit)
    return wire.sign(pkt, key) if key is not None else pkt


def slave_capture(slave: "Slave") -> CapturedPair:
    """The pair a slave has captured so far, or CaptureTimeout if incomplete."""
    if slave.captured is None:
        raise CaptureTimeout(f"{slave.name} has not captured a mode 5 / mode 3 pair")
    return slave.captured


class Slave(Host):
    """Sniffs its own segment and forwards the first matching packets verbatim."""

    def __init__(self, name: str, server: Address, victim: Address, master: Optional["Attacker"] = None,
                 forward_delay=Fraction(1), capture_window=Fraction(600)):
        super().__init__(name)
        self.server = server
        self.victim = victim
        self.master = master
        self.forward_delay = Fraction(forward_delay)
        self.capture_window = Fraction(capture_window)
        self.captured: Optional[CapturedPair] = None
        self.timed_out = False
        self._mode5: Optional[Tuple[bytes, Fraction]] = None
        self._mode3: Optional[Tuple[bytes, Fraction]] = None

    def start(self) -> None:
        self.net.sniff(self, self.segment)
        self.sim.call_later(self.capture_window, self._window_closed, label=f"{self.name} capture window")

    def on_sniff(self, record: PacketRecord) -> None:
        if self.captured is not None or self.timed_out or record.kind != "ntp":
            return
        mode = wire.mode_of(record.wire_bytes)
        if mode == Mode.BROADCAST and self._mode5 is None and record.claimed_source == self.server:
            self._mode5 = (record.wire_bytes, self.now)
            self.log("capture", f"mode5 tx={record.tx_id}")
        elif (mode == Mode.CLIENT and self._mode3 is None and record.claimed_source == self.victim
              and record.destination == self.server):
            self._mode3 = (record.wire_bytes, self.now)
            self.log("capture", f"mode3 tx={record.tx_id}")
        if self._mode5 and self._mode3:
            self.captured = CapturedPair(self._mode5[0], self._mode3[0], (self._mode5[1], self._mode3[1]))
            if self.master is not None:
                self.log("forward", f"to {self.master.name} in {float(self.forward_delay):g} s")
                self.sim.call_later(self.forward_delay, self.master.on_capture, self.captured,
                                    label=f"{self.name} forward")

    def _window_closed(self) -> None:
        if self.captured is None:
            self.timed_out = True
            self.log("capture-timeout", f"no pair within {float(self.capture_window):g} s")
            if self.master is not None:
                self.master.on_capture_failed()


class Attacker(Host):
    def __init__(self, name: str, position: AttackerPosition, schedule: AttackSchedule,
                 seed=0, clock: Optional[SimClock] = None):
        super().__init__(name)
        self.position = position
        self.schedule = schedule
        self.rng = random.Random(f"{seed}:{name}")
        self.clock = clock or SimClock()
        self.pair: Optional[CapturedPair] = None
        self.warnings: List[str] = []
        self._stopped = False

    def start(self) -> None:
        s = self.schedule
        if s.server is None or not s.targets:
            raise ValueError(f"{self.name}: schedule needs a server and at least one target")
        if self.position.kind is not AttackerKind.OFF_PATH_WITH_SLAVE:
            self.sim.schedule(s.start_time, self._begin, label=f"{self.name} attack start")
        self.sim.schedule(s.stop_time, self._end, label=f"{self.name} attack stop")

    def _begin(self) -> None:
        if self._stopped:
            return
        self.log("attack-start", f"{self.position.kind.value} targets={','.join(map(str, self.schedule.targets))}")
        if self.pair is not None:
            self.replay_attack(self.pair, self.schedule)
        else:
            for victim in self.schedule.targets:
                self._chain(mode5_emission_times(self.schedule), 0, self._emit_mode5, victim)
                self.spoof_mode3_flood(victim, self.schedule.server, self.schedule)

    def _end(self) -> None:
        self._stopped = True
        self.log("attack-stop")

    def _chain(self, times: List[Fraction], i: int, emit, *args) -> None:
        """Schedule emission i; each emission schedules the next to keep the queue short."""
        if i >= len(times):
            return

        def fire():
            if self._stopped:
                return
            emit(*args)
            self._chain(times, i + 1, emit, *args)

        self.sim.schedule(max(times[i], self.now), fire, label=f"{self.name} emit")

    # -- forging ------------------------------------------------------------
    def _emit_mode5(self, victim: Address) -> None:
        pkt = craft_panic_mode5(self.schedule.server, self.clock.reading(self.now), self.position.signing_key(),
                                self.schedule.displacement)
        self.net.send(self, victim, wire.encode(pkt), claimed_source=self.schedule.server)

    def _emit_mode3(self, victim: Address, server: Address) -> None:
        # an off-path attacker cannot see the victim's queries; any timestamp will do
        xmt = NtpTimestamp.from_int(self.rng.getrandbits(64) | (1 << 63))
        pkt = craft_spoofed_mode3(xmt, self.position.signing_key())
        self.net.send(self, server, wire.encode(pkt), claimed_source=victim)

    def spoof_mode3_flood(self, victim_address: Address, server_address: Address,
                          schedule: AttackSchedule) -> List[Fraction]:
        times = mode3_emission_times(schedule)
        self._chain(times, 0, self._emit_mode3, victim_address, server_address)
        return times

    def spoof_kod_directly(self, victim_address: Address, server_identity: Address,
                           origin: NtpTimestamp = wire.NULL_TS, poll_exponent: int = 10):
        kod = wire.make_kod(poll_exponent, origin)
        key = self.position.signing_key()
        if key is not None:
            kod = wire.sign(kod, key)
        return self.net.send(self, victim_address, wire.encode(kod), claimed_source=server_identity)

    # -- replay -------------------------------------------------------------
    def on_capture(self, pair: CapturedPair) -> None:
        self.pair = pair
        self.log("pair-received", f"captured at {float(pair.capture_times[0]):.3f}/{float(pair.capture_times[1]):.3f}")
        if self.now >= self.schedule.stop_time:
            return
        self.sim.schedule(max(self.schedule.start_time, self.now), self._begin, label=f"{self.name} attack start")

    def on_capture_failed(self) -> None:
        self.log("attack-abort", "slave captured nothing")

    def replay_attack(self, pair: CapturedPair, schedule: AttackSchedule) -> List[str]:
        staleness = self.now - pair.capture_times[0]
        if staleness <= PANIC_THRESHOLD:
            msg = f"replay staleness {float(staleness):.1f} s does not exceed the panic threshold"
            self.warnings.append(msg)
            self.log("warning", msg)
        # shift the schedule so replay starts now (the pair may arrive after start_time)
        base = AttackSchedule(self.now, schedule.stop_time, schedule.mode5_rate, schedule.mode3_burst,
                              schedule.mode3_interval, schedule.mode3_offset, schedule.displacement,
                              schedule.targets, schedule.server)
        for victim in schedule.targets:
            self._chain(mode5_emission_times(base), 0, self._replay, pair.mode5_copy, victim, schedule.server)
            self._chain(mode3_emission_times(base), 0, self._replay, pair.mode3_copy, schedule.server, victim)
        return list(self.warnings)

    def _replay(self, payload: bytes, destination: Address, claimed: Address) -> None:
        self.net.send(self, destination, payload, claimed_source=claimed)
