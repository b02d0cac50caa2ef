"""Deterministic discrete-event network.

Hosts live on numbered segments. Host addresses are 10.<segment>.0.<host>;
the segment broadcast address is 10.<segment>.0.255 and any IPv4 multicast
group can be joined. A sender may put any address in the source field;
the network always knows the physical sender.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from ipaddress import IPv4Address
from typing import Callable, Dict, List, Optional, Set, Tuple

from . import wire


Address = IPv4Address

BROADCAST_HOST = 255


def host_address(segment: int, host: int) -> Address:
    if not 1 <= segment <= 254 or not 1 <= host <= 254:
        raise ValueError(f"address out of range: segment {segment}, host {host}")
    return IPv4Address(f"10.{segment}.0.{host}")


def broadcast_address(segment: int) -> Address:
    return IPv4Address(f"10.{segment}.0.{BROADCAST_HOST}")


def segment_of(addr: Address) -> Optional[int]:
    if addr.is_multicast:
        return None
    return addr.packed[1]


def is_broadcast(addr: Address) -> bool:
    return not addr.is_multicast and addr.packed[3] == BROADCAST_HOST


class SimulationFault(RuntimeError):
    """An event callback failed; carries the offending event."""

    def __init__(self, event: "ScheduledEvent", cause: BaseException):
        super().__init__(f"event {event.label or event.callback!r} at t={float(event.time):.6f} failed: {cause!r}")
        self.event = event
        self.cause = cause


class SendError(ValueError):
    pass


class SniffRefused(PermissionError):
    pass


@dataclass(order=True)
class ScheduledEvent:
    time: Fraction
    seq: int
    callback: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    label: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)

    def cancel(self):
        self.cancelled = True


class Simulator:
    """Single-threaded event loop ordered by (time, insertion sequence)."""

    def __init__(self):
        self.now = Fraction(0)
        self._queue: List[ScheduledEvent] = []
        self._seq = itertools.count()

    def schedule(self, at, callback, *args, label: str = "") -> ScheduledEvent:
        at = Fraction(at)
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({float(at)} < {float(self.now)})")
        ev = ScheduledEvent(at, next(self._seq), callback, args, label)
        heapq.heappush(self._queue, ev)
        return ev

    def call_later(self, delay, callback, *args, label: str = "") -> ScheduledEvent:
        return self.schedule(self.now + Fraction(delay), callback, *args, label=label)

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, end_time) -> Fraction:
        end_time = Fraction(end_time)
        if end_time < self.now:
            raise ValueError("end_time precedes current simulation time")
        while self._queue and self._queue[0].time <= end_time:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            try:
                ev.callback(*ev.args)
            except SimulationFault:
                raise
            except Exception as exc:
                raise SimulationFault(ev, exc) from exc
        self.now = end_time
        return end_time


@dataclass(frozen=True)
class TimelineEvent:
    time: Fraction
    actor: str
    kind: str
    detail: str = ""


class Timeline:
    def __init__(self):
        self.events: List[TimelineEvent] = []

    def log(self, time, actor: str, kind: str, detail: str = "") -> None:
        self.events.append(TimelineEvent(Fraction(time), actor, kind, detail))

    def of_kind(self, kind: str, actor: Optional[str] = None) -> List[TimelineEvent]:
        return [e for e in self.events if e.kind == kind and (actor is None or e.actor == actor)]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class Link:
    delay: Fraction = Fraction(1, 1000)
    symmetric: bool = True
    loss: float = 0.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("link delay must be non-negative")
        if not 0 <= self.loss <= 1:
            raise ValueError("loss must be a probability")


INTRA_SEGMENT = Link(Fraction(1, 1000))
INTER_SEGMENT = Link(Fraction(5, 100))


@dataclass
class DeliveryPolicy:
    ingress_filtering: bool = False
    # recipient -> physical senders allowed to deliver broadcast-mode packets to it
    client_acl: Dict[Address, frozenset] = field(default_factory=dict)


class Disposition(str, enum.Enum):
    DELIVERED = "delivered"
    DROPPED_FILTER = "dropped_filter"
    DROPPED_ACL = "dropped_acl"
    DROPPED_LOSS = "dropped_loss"


@dataclass
class PacketRecord:
    tx_id: int
    send_time: Fraction
    arrival_time: Fraction
    claimed_source: Address
    actual_sender: Address
    destination: Address
    recipient: Address
    wire_bytes: bytes
    label: str
    kind: str = "ntp"
    disposition: Optional[Disposition] = None

    @property
    def spoofed(self) -> bool:
        return self.claimed_source != self.actual_sender


class Host:
    """Base class for anything attached to the network."""

    def __init__(self, name: str):
        self.name = name
        self.address: Optional[Address] = None
        self.segment: Optional[int] = None
        self.net: Optional["Network"] = None

    @property
    def sim(self) -> Simulator:
        return self.net.sim

    @property
    def now(self) -> Fraction:
        return self.net.sim.now

    def log(self, kind: str, detail: str = "") -> None:
        self.net.timeline.log(self.net.sim.now, self.name, kind, detail)

    def start(self) -> None:
        """Called once when the scenario starts."""

    def receive(self, record: PacketRecord) -> None:
        """Called at arrival time for every delivered frame."""

    def on_sniff(self, record: PacketRecord) -> None:
        """Called for frames seen on a sniffed segment."""


class Network:
    def __init__(self, sim: Optional[Simulator] = None, policy: Optional[DeliveryPolicy] = None,
                 rng: Optional[random.Random] = None, timeline: Optional[Timeline] = None):
        self.sim = sim or Simulator()
        self.policy = policy or DeliveryPolicy()
        self.rng = rng or random.Random(0)
        self.timeline = timeline or Timeline()
        self.records: List[PacketRecord] = []
        self._segments: Dict[int, Link] = {}
        self._links: Dict[Tuple[int, int], Link] = {}
        self._hosts: Dict[Address, Host] = {}
        self._members: Dict[int, List[Host]] = {}
        self._groups: Dict[Address, List[Host]] = {}
        self._sniff_granted: Set[str] = set()
        self._sniffers: Dict[int, List[Host]] = {}
        self._sniffed: Set[Tuple[str, int]] = set()
        self._tx = itertools.count(1)
        self.transmissions: List[Tuple[int, Fraction, str, str]] = []

    # topology -----------------------------------------------------------
    def add_segment(self, segment: int, link: Link = INTRA_SEGMENT) -> None:
        if segment in self._segments:
            raise ValueError(f"segment {segment} already exists")
        host_address(segment, 1)  # range check
        self._segments[segment] = link
        self._members[segment] = []

    def set_link(self, seg_a: int, seg_b: int, link: Link) -> None:
        self._links[(seg_a, seg_b)] = link
        if link.symmetric:
            self._links[(seg_b, seg_a)] = link

    def link_between(self, seg_a: int, seg_b: int) -> Link:
        if seg_a == seg_b:
            return self._segments[seg_a]
        return self._links.get((seg_a, seg_b), INTER_SEGMENT)

    def attach(self, host: Host, segment: int) -> Address:
        if segment not in self._segments:
            raise ValueError(f"unknown segment {segment}")
        members = self._members[segment]
        addr = host_address(segment, len(members) + 1)
        host.address, host.segment, host.net = addr, segment, self
        members.append(host)
        self._hosts[addr] = host
        return addr

    def host(self, addr: Address) -> Host:
        return self._hosts[addr]

    def hosts(self) -> List[Host]:
        return list(self._hosts.values())

    def subscribe_multicast(self, host: Host, group: Address) -> Address:
        if host.address not in self._hosts:
            raise ValueError(f"{host.name} is not attached")
        if not group.is_multicast:
            raise ValueError(f"{group} is not a multicast group")
        members = self._groups.setdefault(group, [])
        if host not in members:
            members.append(host)
        return group

    # sniffing -------------------------------------------------------------
    def grant_sniff(self, host: Host) -> None:
        self._sniff_granted.add(host.name)

    def sniff(self, host: Host, segment: int) -> None:
        if host.name not in self._sniff_granted:
            raise SniffRefused(f"{host.name} has no capture capability")
        if host.segment != segment:
            raise SniffRefused(f"{host.name} is not attached to segment {segment}")
        self._sniffers.setdefault(segment, []).append(host)

    # delivery -------------------------------------------------------------
    def _recipients(self, sender: Host, destination: Address) -> List[Host]:
        if destination.is_multicast:
            return [h for h in self._groups.get(destination, []) if h is not sender]
        if is_broadcast(destination):
            seg = segment_of(destination)
            if seg not in self._members:
                raise SendError(f"unknown segment for {destination}")
            return [h for h in self._members[seg] if h is not sender]
        if destination not in self._hosts:
            raise SendError(f"unknown destination {destination}")
        return [self._hosts[destination]]

    def send(self, sender: Host, destination: Address, payload: bytes, *,
             claimed_source: Optional[Address] = None, kind: str = "ntp",
             label: Optional[str] = None) -> List[PacketRecord]:
        if sender.net is not self:
            raise SendError(f"{sender.name} is not attached to this network")
        now = self.sim.now
        claimed = claimed_source if claimed_source is not None else sender.address
        if label is None:
            label = wire.describe(payload) if kind == "ntp" else kind
        recipients = self._recipients(sender, destination)
        tx_id = next(self._tx)
        self.transmissions.append((tx_id, now, sender.name, label))
        spoof = f" as {claimed}" if claimed != sender.address else ""
        self.timeline.log(now, sender.name, f"{label}-sent", f"tx={tx_id} to {destination}{spoof}")
        out = []
        for host in recipients:
            link = self.link_between(sender.segment, host.segment)
            rec = PacketRecord(tx_id, now, now + link.delay, claimed, sender.address, destination,
                               host.address, bytes(payload), label, kind)
            self.records.append(rec)
            out.append(rec)
            self.sim.schedule(rec.arrival_time, self._deliver, rec, host, link,
                              label=f"deliver tx={tx_id} to {host.name}")
        if out:
            self._sniff(sender.segment, out[0])
        return out

    def _deliver(self, rec: PacketRecord, host: Host, link: Link) -> None:
        sender_seg = segment_of(rec.actual_sender)
        if (self.policy.ingress_filtering and host.segment != sender_seg
                and segment_of(rec.claimed_source) != sender_seg):
            rec.disposition = Disposition.DROPPED_FILTER
        elif self._acl_blocks(rec, host):
            rec.disposition = Disposition.DROPPED_ACL
        elif link.loss and self.rng.random() < link.loss:
            rec.disposition = Disposition.DROPPED_LOSS
        else:
            rec.disposition = Disposition.DELIVERED
        if rec.disposition is not Disposition.DELIVERED:
            self.timeline.log(self.sim.now, host.name, rec.disposition.value.replace("_", "-"),
                              f"tx={rec.tx_id} {rec.label} from {rec.claimed_source}")
            return
        self.timeline.log(self.sim.now, host.name, f"{rec.label}-recv",
                          f"tx={rec.tx_id} from {rec.claimed_source}")
        if host.segment != sender_seg:
            self._sniff(host.segment, rec)
        host.receive(rec)

    def _acl_blocks(self, rec: PacketRecord, host: Host) -> bool:
        trusted = self.policy.client_acl.get(host.address)
        if trusted is None or rec.kind != "ntp":
            return False
        if wire.mode_of(rec.wire_bytes) != wire.Mode.BROADCAST:
            return False
        return rec.actual_sender not in trusted

    def _sniff(self, segment: int, rec: PacketRecord) -> None:
        for sniffer in self._sniffers.get(segment, []):
            key = (sniffer.name, rec.tx_id)
            if key in self._sniffed or rec.actual_sender == sniffer.address:
                continue
            self._sniffed.add(key)
            sniffer.on_sniff(rec)

    def counts(self) -> Dict[str, Dict[str, int]]:
        """Transmissions per physical sender name and packet label."""
        out: Dict[str, Dict[str, int]] = {}
        for _, _, name, label in self.transmissions:
            bucket = out.setdefault(name, {})
            bucket[label] = bucket.get(label, 0) + 1
        return out
