"""Broadcast/multicast NTP client and the probe client that watches it.

The client mobilizes on the first mode 5 it hears, calibrates the path
delay with a volley of mode 3 queries, then keeps its clock in line with
subsequent broadcasts. What it does when a broadcast implies an offset
beyond the panic threshold is a profile choice: exit, or go back and
recalibrate (the behaviour the spoofing attack feeds on).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Tuple

from . import wire
from .clock import (Adjustment, DEFAULT_THRESHOLDS, SimClock, Thresholds, TimestampQuad,
                    classify_offset, compute_delay, compute_offset)
from .server import ECHO_REPLY, ECHO_REQUEST
from .simnet import Address, Host, PacketRecord, ScheduledEvent
from .wire import Mode, NtpPacket, NtpTimestamp, SymmetricKey

UNSYNCHRONIZED = 16


class Phase(str, enum.Enum):
    IDLE = "idle"
    CALIBRATING = "calibrating"
    SYNCED = "synced"
    REFRAIN = "refrain"


class PanicBehavior(str, enum.Enum):
    QUIT_ON_PANIC = "quit_on_panic"
    RECALIBRATE_ON_PANIC = "recalibrate_on_panic"


@dataclass
class BehaviorProfile:
    panic_behavior: PanicBehavior = PanicBehavior.RECALIBRATE_ON_PANIC
    kod_nonce_check: bool = True
    out_of_band_ppd: bool = False
    backup_unicast_server: Optional[Address] = None
    trusted_broadcast_sources: Optional[FrozenSet[Address]] = None


@dataclass
class ClientConfig:
    poll: int = 6
    volley_size: int = 4
    volley_spacing: Fraction = Fraction(2)
    volley_timeout: Fraction = Fraction(8)
    mobilization_delay: Fraction = Fraction(2)
    recalibration_delay: Fraction = Fraction(6)
    backup_poll: int = 6
    oob_interval: Fraction = Fraction(64)
    oob_timeout: Fraction = Fraction(4)
    oob_holdoff: Fraction = Fraction(8)
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    keyring: FrozenSet[SymmetricKey] = frozenset()
    key_id: Optional[int] = None

    def __post_init__(self):
        if self.volley_size < 1:
            raise ValueError("volley_size must be at least 1")
        if self.volley_spacing < 0 or self.volley_timeout <= 0:
            raise ValueError("volley spacing/timeout must be positive")

    def signing_key(self) -> Optional[SymmetricKey]:
        if not self.keyring:
            return None
        keys = sorted(self.keyring, key=lambda k: k.key_id)
        if self.key_id is None:
            return keys[0]
        return next(k for k in keys if k.key_id == self.key_id)


@dataclass
class TerminationFlag:
    exited: bool = False
    reason: str = ""


@dataclass
class PendingQuery:
    server: Address
    purpose: str  # "volley" or "backup"
    volley_id: Optional[int] = None


@dataclass
class ClientState:
    phase: Phase = Phase.IDLE
    association_server: Optional[Address] = None
    ppd: Optional[Fraction] = None
    pending_queries: Dict[NtpTimestamp, PendingQuery] = field(default_factory=dict)
    refrain_until: Optional[Fraction] = None
    calibration_attempts: int = 0
    failed_attempts: int = 0
    volley_remaining: int = 0
    reference_ts: NtpTimestamp = wire.NULL_TS
    stratum: int = UNSYNCHRONIZED
    termination: TerminationFlag = field(default_factory=TerminationFlag)


@dataclass
class _Volley:
    id: int
    server: Address
    size: int
    sent: int = 0
    resolved: int = 0
    samples: List[Tuple[TimestampQuad, int]] = field(default_factory=list)
    kod: bool = False
    last_send: Optional[Fraction] = None
    timer: Optional[ScheduledEvent] = None
    done: bool = False


def _fmt(value) -> str:
    return f"{float(value):.6f}"


class NtpClient(Host):
    def __init__(self, name: str, profile: Optional[BehaviorProfile] = None,
                 config: Optional[ClientConfig] = None, clock: Optional[SimClock] = None):
        super().__init__(name)
        self.profile = profile or BehaviorProfile()
        self.config = config or ClientConfig()
        self.clock = clock or SimClock()
        self.state = ClientState()
        self.sync_times: List[Fraction] = []
        self.phase_history: List[Tuple[Fraction, Phase]] = []
        self._volley: Optional[_Volley] = None
        self._volley_ids = itertools.count(1)
        self._volley_due: Optional[ScheduledEvent] = None
        self._refrain_timer: Optional[ScheduledEvent] = None
        self._backup_refrain_until: Optional[Fraction] = None
        self._oob_seq = itertools.count(1)
        self._oob_inflight: Optional[Tuple[int, Fraction, ScheduledEvent]] = None
        self._oob_trigger: Optional[Tuple[NtpPacket, Fraction]] = None
        self._oob_last: Optional[Fraction] = None

    # -- helpers -------------------------------------------------------------
    @property
    def keyed(self) -> bool:
        return bool(self.config.keyring)

    @property
    def exited(self) -> bool:
        return self.state.termination.exited

    def _refrain_active(self, at) -> bool:
        return self.state.refrain_until is not None and at < self.state.refrain_until

    def _set_phase(self, phase: Phase, why: str = "") -> None:
        if phase is not self.state.phase:
            self.log("phase", f"{self.state.phase.value} -> {phase.value}" + (f" ({why})" if why else ""))
            self.state.phase = phase
            self.phase_history.append((self.now, phase))

    def _auth_ok(self, pkt: NtpPacket, what: str) -> bool:
        if not self.keyed:
            return True
        status = wire.verify_mac(pkt, self.config.keyring)
        if status is wire.MacStatus.VALID:
            return True
        self.log("drop-auth", f"{what}: {status.value}")
        return False

    def _sign(self, pkt: NtpPacket) -> NtpPacket:
        key = self.config.signing_key()
        return wire.sign(pkt, key) if key is not None else pkt

    # -- lifecycle -----------------------------------------------------------
    def start(self) -> None:
        if self.profile.backup_unicast_server is not None:
            self.sim.call_later(1, self._backup_poll, label=f"{self.name} backup poll")

    def receive(self, record: PacketRecord) -> None:
        if self.exited:
            return
        if record.kind == "echo":
            if record.wire_bytes.startswith(ECHO_REPLY):
                self._on_echo_reply(record)
            return
        try:
            pkt = wire.decode(record.wire_bytes)
        except wire.PacketError as exc:
            self.log("drop-malformed", str(exc))
            return
        if pkt.mode == Mode.BROADCAST:
            self.on_mode5(pkt, record.claimed_source, record.arrival_time)
        elif pkt.mode == Mode.SERVER:
            self.on_mode4(pkt, record.claimed_source, record.arrival_time)
        elif pkt.mode == Mode.CLIENT:
            reply = self.on_probe_mode3(pkt, record.claimed_source, record.arrival_time)
            if reply is not None:
                self.net.send(self, record.claimed_source, wire.encode(reply))

    # -- broadcast path ------------------------------------------------------
    def on_mode5(self, pkt: NtpPacket, source: Address, arrival_time) -> None:
        if self.exited or not self._auth_ok(pkt, f"mode5 from {source}"):
            return
        trusted = self.profile.trusted_broadcast_sources
        if trusted is not None and source not in trusted:
            self.log("drop-untrusted", f"mode5 from {source}")
            return
        st = self.state
        if st.phase is Phase.IDLE:
            if self.profile.out_of_band_ppd:
                st.association_server = source
                self.out_of_band_ppd_measure(source, arrival_time, trigger=(pkt, arrival_time))
                return
            st.association_server = source
            self._set_phase(Phase.CALIBRATING, f"mobilized by {source}")
            self._schedule_volley(arrival_time + self.config.mobilization_delay)
            return
        if st.phase is Phase.SYNCED:
            if source != st.association_server:
                self.log("mode5-ignored", f"not associated with {source}")
                return
            t4 = self.clock.reading(arrival_time)
            theta = pkt.transmit_ts.to_seconds() + st.ppd - t4
            adj = classify_offset(theta, self.config.thresholds)
            if adj is Adjustment.PANIC:
                self._on_panic(pkt, source, arrival_time, theta)
            else:
                self.apply_sync(theta, pkt.stratum, arrival_time, via=f"broadcast {adj.value}")
            return
        self.log("mode5-ignored", f"phase {st.phase.value}")

    def _on_panic(self, pkt: NtpPacket, source: Address, arrival_time, theta) -> None:
        self.log("panic", f"theta={_fmt(theta)} from {source}")
        if self.profile.panic_behavior is PanicBehavior.QUIT_ON_PANIC:
            self.state.termination = TerminationFlag(True, f"panic offset {_fmt(theta)} s")
            self.log("exit", self.state.termination.reason)
            return
        if self.profile.out_of_band_ppd:
            self.out_of_band_ppd_measure(source, arrival_time)
            return
        self._set_phase(Phase.CALIBRATING, "panic offset")
        self._schedule_volley(arrival_time + self.config.recalibration_delay)

    # -- calibration volley --------------------------------------------------
    def _schedule_volley(self, at) -> None:
        if self._volley is not None and not self._volley.done:
            return  # single attempt in flight
        if self._volley_due is not None and not self._volley_due.cancelled:
            return
        self._volley_due = self.sim.schedule(at, self._volley_timer, label=f"{self.name} volley")

    def _volley_timer(self) -> None:
        self._volley_due = None
        if self.exited or self.state.phase is not Phase.CALIBRATING:
            return
        if self._refrain_active(self.now):
            self._set_phase(Phase.REFRAIN, "refrain still active")
            self._arm_refrain_timer()
            return
        self.start_calibration_volley(self.state.association_server, self.now)

    def start_calibration_volley(self, server_address: Address, send_time) -> _Volley:
        st = self.state
        if st.phase is not Phase.CALIBRATING:
            raise RuntimeError(f"{self.name}: volley requested in phase {st.phase.value}")
        if self._refrain_active(send_time):
            raise RuntimeError(f"{self.name}: volley requested during refrain")
        volley = _Volley(next(self._volley_ids), server_address, self.config.volley_size)
        self._volley = volley
        st.calibration_attempts += 1
        st.volley_remaining = volley.size
        self.log("volley-start", f"attempt={st.calibration_attempts} to {server_address}")
        for i in range(volley.size):
            self.sim.schedule(Fraction(send_time) + i * self.config.volley_spacing,
                              self._send_volley_query, volley, label=f"{self.name} volley query")
        return volley

    def _send_volley_query(self, volley: _Volley) -> None:
        if self.exited or volley.done:
            return
        ts = self._send_query(volley.server, PendingQuery(volley.server, "volley", volley.id))
        volley.sent += 1
        self.state.volley_remaining = volley.size - volley.sent
        if volley.sent == volley.size:
            volley.last_send = self.now
            volley.timer = self.sim.call_later(self.config.volley_timeout, self._complete_volley, volley,
                                               label=f"{self.name} volley timeout")
        return ts

    def _send_query(self, server: Address, pending: PendingQuery) -> NtpTimestamp:
        st = self.state
        xmt = self.clock.now(self.now)
        pkt = self._sign(NtpPacket(
            mode=Mode.CLIENT,
            leap=3 if st.stratum == UNSYNCHRONIZED else 0,
            stratum=st.stratum,
            poll=self.config.poll,
            precision=-20,
            reference_ts=st.reference_ts,
            transmit_ts=xmt,
        ))
        st.pending_queries[xmt] = pending
        self.net.send(self, server, wire.encode(pkt))
        return xmt

    def _resolve(self, pending: PendingQuery) -> None:
        volley = self._volley
        if pending.purpose != "volley" or volley is None or volley.id != pending.volley_id or volley.done:
            return
        volley.resolved += 1
        if volley.sent == volley.size and volley.resolved >= volley.size:
            self._complete_volley(volley)

    def _complete_volley(self, volley: _Volley) -> None:
        if volley.done:
            return
        volley.done = True
        if volley.timer is not None:
            volley.timer.cancel()
        st = self.state
        for ts in [ts for ts, p in st.pending_queries.items() if p.volley_id == volley.id]:
            del st.pending_queries[ts]
        if self.exited:
            return
        if volley.samples:
            quad, server_stratum = min(volley.samples, key=lambda s: compute_delay(s[0]))
            theta = compute_offset(quad)
            delay = compute_delay(quad)
            adj = classify_offset(theta, self.config.thresholds)
            if adj is not Adjustment.PANIC:
                st.ppd = delay / 2
                self.log("volley-success", f"attempt={st.calibration_attempts} ppd={_fmt(st.ppd)} "
                                           f"theta={_fmt(theta)}")
                self._set_phase(Phase.SYNCED, "path delay calibrated")
                self.apply_sync(theta, server_stratum, self.now, via=f"volley {adj.value}")
                return
            self.log("volley-discard", f"panic-grade sample theta={_fmt(theta)}")
        st.failed_attempts += 1
        self.log("volley-failed", f"attempt={st.calibration_attempts} kod={'yes' if volley.kod else 'no'}")
        if self._refrain_active(self.now):
            self._set_phase(Phase.REFRAIN, "KoD")
            self._arm_refrain_timer()
        else:
            self._set_phase(Phase.CALIBRATING, "retry")
            self._schedule_volley(max(self.now, volley.last_send + self.config.volley_timeout))

    # -- server responses ----------------------------------------------------
    def on_mode4(self, pkt: NtpPacket, source: Address, arrival_time) -> None:
        if self.exited:
            return
        if pkt.stratum == 0:
            self.on_kod(pkt, source, arrival_time)
            return
        if not self._auth_ok(pkt, f"mode4 from {source}"):
            return
        st = self.state
        pending = st.pending_queries.get(pkt.origin_ts)
        if pkt.origin_ts.is_null or pending is None or pending.server != source:
            self.log("test2-reject", f"mode4 from {source} origin={pkt.origin_ts}")
            return
        del st.pending_queries[pkt.origin_ts]
        quad = TimestampQuad(pkt.origin_ts.to_seconds(), pkt.receive_ts.to_seconds(),
                             pkt.transmit_ts.to_seconds(), self.clock.reading(arrival_time))
        if pending.purpose == "backup":
            theta = compute_offset(quad)
            adj = classify_offset(theta, self.config.thresholds)
            if adj is Adjustment.PANIC:
                self.log("backup-discard", f"theta={_fmt(theta)}")
            else:
                self.apply_sync(theta, pkt.stratum, arrival_time, via=f"backup {adj.value}")
            return
        volley = self._volley
        if volley is not None and volley.id == pending.volley_id and not volley.done:
            volley.samples.append((quad, pkt.stratum))
            self.log("volley-sample", f"delay={_fmt(compute_delay(quad))} theta={_fmt(compute_offset(quad))}")
        self._resolve(pending)

    def on_kod(self, pkt: NtpPacket, source: Address, arrival_time) -> None:
        if self.exited:
            return
        st = self.state
        pending = st.pending_queries.get(pkt.origin_ts)
        if self.profile.kod_nonce_check and (pkt.origin_ts.is_null or pending is None):
            self.log("kod-reject", f"from {source} origin={pkt.origin_ts} (nonce mismatch)")
            return
        if not self._auth_ok(pkt, f"KoD from {source}"):
            return
        if pending is not None:
            del st.pending_queries[pkt.origin_ts]
        refrain = Fraction(2) ** max(pkt.poll, self.config.poll)
        until = Fraction(arrival_time) + refrain
        self.log("kod-accept", f"{pkt.kiss_code} from {source} refrain {_fmt(refrain)} s")
        if pending is not None and pending.purpose == "backup":
            self._backup_refrain_until = until
            return
        if st.refrain_until is None or until > st.refrain_until:
            st.refrain_until = until
        self._set_phase(Phase.REFRAIN, f"KoD until {_fmt(st.refrain_until)}")
        self._arm_refrain_timer()
        if pending is not None:
            if self._volley is not None and self._volley.id == pending.volley_id:
                self._volley.kod = True
            self._resolve(pending)

    def _arm_refrain_timer(self) -> None:
        if self._refrain_timer is not None and not self._refrain_timer.cancelled:
            return
        self._refrain_timer = self.sim.schedule(self.state.refrain_until, self._refrain_expired,
                                                label=f"{self.name} refrain expiry")

    def _refrain_expired(self) -> None:
        self._refrain_timer = None
        st = self.state
        if self.exited:
            return
        if self._refrain_active(self.now):
            self._arm_refrain_timer()
            return
        if st.phase is not Phase.REFRAIN:
            return
        if self._volley is not None and not self._volley.done:
            return  # the in-flight volley decides what happens next
        self.log("refrain-exit")
        self._set_phase(Phase.CALIBRATING, "refrain expired")
        if st.association_server is not None:
            self.start_calibration_volley(st.association_server, self.now)

    # -- clock update --------------------------------------------------------
    def apply_sync(self, theta, server_stratum: int, sync_time, via: str = "") -> None:
        st = self.state
        self.clock.adjust(theta)
        st.reference_ts = self.clock.now(sync_time)
        st.stratum = min(server_stratum + 1, UNSYNCHRONIZED)
        self.sync_times.append(Fraction(sync_time))
        self.log("sync", f"{via} theta={_fmt(theta)} stratum={st.stratum} ref={st.reference_ts}")

    # -- acting as a server for lower strata ---------------------------------
    def on_probe_mode3(self, pkt: NtpPacket, source: Address, arrival_time) -> Optional[NtpPacket]:
        if self.exited:
            return None
        st = self.state
        now_ts = self.clock.now(arrival_time)
        refid = st.association_server.packed if st.association_server is not None else b"INIT"
        return NtpPacket(
            mode=Mode.SERVER,
            leap=3 if st.stratum == UNSYNCHRONIZED else 0,
            stratum=st.stratum,
            poll=pkt.poll,
            precision=-20,
            reference_id=refid,
            reference_ts=st.reference_ts,
            origin_ts=pkt.transmit_ts,
            receive_ts=now_ts,
            transmit_ts=now_ts,
        )

    # -- countermeasures -----------------------------------------------------
    def out_of_band_ppd_measure(self, server_address: Address, time,
                                trigger: Optional[Tuple[NtpPacket, Fraction]] = None) -> bool:
        """Start an echo exchange outside NTP to re-measure the path delay.

        Returns False when a measurement is already running or was made too
        recently; a pending trigger broadcast is still remembered.
        """
        if not self.profile.out_of_band_ppd:
            raise RuntimeError("out-of-band delay measurement is disabled")
        if trigger is not None:
            self._oob_trigger = trigger
        if self._oob_inflight is not None:
            return False
        if self._oob_last is not None and time - self._oob_last < self.config.oob_holdoff:
            return False
        seq = next(self._oob_seq)
        sent = self.clock.reading(time)
        timer = self.sim.call_later(self.config.oob_timeout, self._oob_timeout, seq,
                                    label=f"{self.name} echo timeout")
        self._oob_inflight = (seq, sent, timer)
        self._oob_last = Fraction(time)
        self.net.send(self, server_address, ECHO_REQUEST + str(seq).encode(), kind="echo")
        return True

    def _oob_timeout(self, seq: int) -> None:
        if self._oob_inflight is None or self._oob_inflight[0] != seq:
            return
        self._oob_inflight = None
        self.log("oob-timeout", f"echo {seq}")
        self.sim.call_later(self.config.oob_interval, self._oob_periodic, label=f"{self.name} echo retry")

    def _oob_periodic(self) -> None:
        if self.exited or self.state.association_server is None:
            return
        if self.out_of_band_ppd_measure(self.state.association_server, self.now):
            return
        self.sim.call_later(self.config.oob_interval, self._oob_periodic, label=f"{self.name} echo")

    def _on_echo_reply(self, record: PacketRecord) -> None:
        try:
            seq = int(record.wire_bytes[len(ECHO_REPLY):])
        except ValueError:
            return
        if self._oob_inflight is None or self._oob_inflight[0] != seq:
            return
        _, sent, timer = self._oob_inflight
        timer.cancel()
        self._oob_inflight = None
        st = self.state
        rtt = self.clock.reading(self.now) - sent
        first = st.ppd is None
        st.ppd = rtt / 2
        self.log("oob-ppd", f"rtt={_fmt(rtt)} ppd={_fmt(st.ppd)}")
        if st.phase is not Phase.SYNCED:
            self._set_phase(Phase.SYNCED, "out-of-band delay measured")
        trigger, self._oob_trigger = self._oob_trigger, None
        if trigger is not None:
            pkt, arrival = trigger
            theta = pkt.transmit_ts.to_seconds() + st.ppd - self.clock.reading(arrival)
            adj = classify_offset(theta, self.config.thresholds)
            if adj is not Adjustment.PANIC:
                self.apply_sync(theta, pkt.stratum, self.now, via=f"broadcast {adj.value}")
        if first:
            self.sim.call_later(self.config.oob_interval, self._oob_periodic, label=f"{self.name} echo")

    def _backup_poll(self) -> None:
        if self.exited:
            return
        server = self.profile.backup_unicast_server
        if self._backup_refrain_until is None or self.now >= self._backup_refrain_until:
            self._send_query(server, PendingQuery(server, "backup"))
        self.sim.call_later(Fraction(2) ** self.config.backup_poll, self._backup_poll,
                            label=f"{self.name} backup poll")


class ProbeClient(Host):
    """Queries a target host periodically and records its reference timestamp."""

    def __init__(self, name: str, target: Address, interval=60, first_probe=None,
                 clock: Optional[SimClock] = None):
        super().__init__(name)
        self.target = target
        self.interval = Fraction(interval)
        self.first_probe = Fraction(first_probe) if first_probe is not None else self.interval
        self.clock = clock or SimClock()
        self.results: List[Tuple[Fraction, NtpTimestamp, int]] = []
        self._pending: Dict[NtpTimestamp, Fraction] = {}

    def start(self) -> None:
        self.sim.schedule(max(self.now, self.first_probe), self._probe, label=f"{self.name} probe")

    def _probe(self) -> None:
        xmt = self.clock.now(self.now)
        self._pending[xmt] = self.now
        self.net.send(self, self.target, wire.encode(NtpPacket(mode=Mode.CLIENT, poll=6, transmit_ts=xmt)))
        self.sim.call_later(self.interval, self._probe, label=f"{self.name} probe")

    def receive(self, record: PacketRecord) -> None:
        try:
            pkt = wire.decode(record.wire_bytes)
        except wire.PacketError:
            return
        if pkt.mode != Mode.SERVER or self._pending.pop(pkt.origin_ts, None) is None:
            return
        self.results.append((record.arrival_time, pkt.reference_ts, pkt.stratum))
        self.log("probe-result", f"target={record.claimed_source} ref={pkt.reference_ts} stratum={pkt.stratum}")
