"""Scenario files: parsing, network assembly, execution and the verdict.

A scenario is an INI document (see docs/scenario-format.md). Parsing
collects every problem it finds and raises them together, so a broken file
can be fixed in one pass.
"""

from __future__ import annotations

import configparser
import enum
import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from ipaddress import IPv4Address
from typing import Dict, FrozenSet, List, Optional, Tuple

from .adversary import Attacker, AttackerKind, AttackerPosition, AttackSchedule, Slave
from .client import BehaviorProfile, ClientConfig, NtpClient, PanicBehavior, Phase, ProbeClient
from .clock import PANIC_THRESHOLD, SimClock
from .server import NtpServer, RateLimitPolicy, ServerConfig
from .simnet import (INTER_SEGMENT, INTRA_SEGMENT, Address, DeliveryPolicy, Host, Link, Network,
                     Simulator, Timeline, broadcast_address, host_address)
from .wire import SymmetricKey

SEED_ENV = "NTPSIM_SEED"


class Role(str, enum.Enum):
    BROADCAST_SERVER = "broadcast_server"
    UNICAST_SERVER = "unicast_server"
    VICTIM_CLIENT = "victim_client"
    PROBE_CLIENT = "probe_client"
    ATTACKER = "attacker"
    SLAVE = "slave"


class Outcome(str, enum.Enum):
    SUCCEEDED = "attack-succeeded"
    FAILED = "attack-failed"
    BASELINE = "no-attack-baseline"
    INCONCLUSIVE = "inconclusive"


class ScenarioError(ValueError):
    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass
class ProbeSpec:
    target: str
    interval: Fraction
    first_probe: Optional[Fraction] = None


@dataclass
class AttackerSpec:
    kind: AttackerKind
    schedule: AttackSchedule
    slave: Optional[str] = None
    keyed: bool = False


@dataclass
class SlaveSpec:
    server: str
    victim: str
    forward_delay: Fraction = Fraction(1)
    capture_window: Fraction = Fraction(600)


@dataclass
class VictimSpec:
    profile: BehaviorProfile
    config: ClientConfig


@dataclass
class HostSpec:
    name: str
    role: Role
    segment: int
    address: Address
    clock_offset: Fraction = Fraction(0)
    server: Optional[ServerConfig] = None
    victim: Optional[VictimSpec] = None
    probe: Optional[ProbeSpec] = None
    attacker: Optional[AttackerSpec] = None
    slave: Optional[SlaveSpec] = None


@dataclass
class ScenarioSpec:
    duration: Fraction
    name: str = "scenario"
    seed: Optional[int] = None
    probe_interval: Fraction = Fraction(60)
    authentication: bool = False
    keys: FrozenSet[SymmetricKey] = frozenset()
    multicast_group: Optional[Address] = None
    segments: Dict[int, Link] = field(default_factory=dict)
    links: List[Tuple[int, int, Link]] = field(default_factory=list)
    policy: DeliveryPolicy = field(default_factory=DeliveryPolicy)
    hosts: List[HostSpec] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def host(self, name: str) -> HostSpec:
        for h in self.hosts:
            if h.name == name:
                return h
        raise KeyError(name)

    def with_role(self, role: Role) -> List[HostSpec]:
        return [h for h in self.hosts if h.role is role]

    @property
    def broadcast_server(self) -> HostSpec:
        return self.with_role(Role.BROADCAST_SERVER)[0]


# -- parsing -----------------------------------------------------------------

_COMMON = {"role", "segment", "clock_offset"}
_RATE = {"min_headway", "burst_allowance", "burst_window", "kod_poll", "stratum"}
_ROLE_KEYS = {
    Role.BROADCAST_SERVER: _COMMON | _RATE | {"broadcast_interval", "broadcast_start"},
    Role.UNICAST_SERVER: _COMMON | _RATE,
    Role.VICTIM_CLIENT: _COMMON | {
        "poll", "panic_behavior", "kod_nonce_check", "out_of_band_ppd", "backup_server", "trusted_sources",
        "volley_size", "volley_spacing", "volley_timeout", "mobilization_delay", "recalibration_delay",
        "backup_poll", "oob_interval"},
    Role.PROBE_CLIENT: _COMMON | {"target", "interval", "first_probe"},
    Role.ATTACKER: _COMMON | {
        "position", "start", "stop", "mode5_rate", "mode3_burst", "mode3_interval", "mode3_offset",
        "displacement", "targets", "server", "slave", "keyed"},
    Role.SLAVE: _COMMON | {"server", "victim", "forward_delay", "capture_window"},
}
_SCENARIO_KEYS = {"name", "duration", "seed", "probe_interval", "authentication", "keys", "multicast_group"}
_POLICY_KEYS = {"ingress_filtering", "client_acl"}
_LINK_KEYS = {"delay", "loss"}


class _Reader:
    """Typed access to one section that records errors instead of raising."""

    def __init__(self, section: configparser.SectionProxy, errors: List[str], allowed):
        self.section = section
        self.errors = errors
        for key in section:
            if key not in allowed:
                errors.append(f"[{section.name}] unknown key '{key}'")

    def _err(self, key, msg):
        self.errors.append(f"[{self.section.name}] {key}: {msg}")

    def raw(self, key, default=None):
        return self.section.get(key, default)

    def number(self, key, default=None, required=False, minimum=None, positive=False) -> Optional[Fraction]:
        text = self.section.get(key)
        if text is None:
            if required:
                self._err(key, "required")
            return default
        try:
            value = Fraction(text.strip())
        except (ValueError, ZeroDivisionError):
            self._err(key, f"not a number: {text!r}")
            return default
        if positive and value <= 0:
            self._err(key, "must be positive")
        elif minimum is not None and value < minimum:
            self._err(key, f"must be at least {minimum}")
        return value

    def integer(self, key, default=None, required=False, minimum=None) -> Optional[int]:
        value = self.number(key, None, required, minimum)
        if value is None:
            return default
        if value.denominator != 1:
            self._err(key, "must be an integer")
            return default
        return int(value)

    def boolean(self, key, default=False) -> bool:
        text = self.section.get(key)
        if text is None:
            return default
        state = configparser.ConfigParser.BOOLEAN_STATES.get(text.strip().lower())
        if state is None:
            self._err(key, f"not a boolean: {text!r}")
            return default
        return state

    def names(self, key) -> List[str]:
        text = self.section.get(key)
        if not text:
            return []
        return [n.strip() for n in text.replace(",", " ").split() if n.strip()]

    def choice(self, key, enum_cls, default):
        text = self.section.get(key)
        if text is None:
            return default
        try:
            return enum_cls(text.strip())
        except ValueError:
            options = ", ".join(e.value for e in enum_cls)
            self._err(key, f"{text!r} is not one of {options}")
            return default


def _parse_keys(text: str, errors: List[str]) -> FrozenSet[SymmetricKey]:
    keys = set()
    for item in [i.strip() for i in text.split(",") if i.strip()]:
        kid, sep, secret = item.partition(":")
        try:
            if not sep:
                raise ValueError("expected id:secret")
            keys.add(SymmetricKey(int(kid), secret.strip().encode()))
        except ValueError as exc:
            errors.append(f"[scenario] keys: bad key {item!r} ({exc})")
    return frozenset(keys)


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a scenario document; raises ScenarioError listing every problem."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError([f"syntax: {exc.message if hasattr(exc, 'message') else exc}"]) from None
    errors: List[str] = []

    if not cp.has_section("scenario"):
        raise ScenarioError(["missing [scenario] section"])
    sc = _Reader(cp["scenario"], errors, _SCENARIO_KEYS)
    spec = ScenarioSpec(duration=sc.number("duration", Fraction(0), required=True, positive=True))
    spec.name = sc.raw("name", "scenario").strip()
    spec.seed = sc.integer("seed")
    spec.probe_interval = sc.number("probe_interval", Fraction(60), positive=True)
    spec.authentication = sc.boolean("authentication")
    spec.keys = _parse_keys(sc.raw("keys", ""), errors)
    if spec.authentication and not spec.keys:
        errors.append("[scenario] authentication: enabled but no keys given")
    group = sc.raw("multicast_group")
    if group is not None:
        try:
            spec.multicast_group = IPv4Address(group.strip())
            if not spec.multicast_group.is_multicast:
                errors.append(f"[scenario] multicast_group: {group} is not a multicast address")
        except ValueError:
            errors.append(f"[scenario] multicast_group: bad address {group!r}")

    host_sections = []
    for name in cp.sections():
        parts = name.split()
        if name in ("scenario", "policy"):
            continue
        if parts[0] == "segment" and len(parts) == 2 and parts[1].isdigit():
            r = _Reader(cp[name], errors, _LINK_KEYS)
            seg = int(parts[1])
            if not 1 <= seg <= 254:
                errors.append(f"[{name}] segment number must be within 1..254")
                continue
            spec.segments[seg] = Link(r.number("delay", INTRA_SEGMENT.delay, minimum=0),
                                      loss=float(r.number("loss", Fraction(0), minimum=0)))
        elif parts[0] == "link" and len(parts) == 3 and parts[1].isdigit() and parts[2].isdigit():
            r = _Reader(cp[name], errors, _LINK_KEYS)
            spec.links.append((int(parts[1]), int(parts[2]),
                               Link(r.number("delay", INTER_SEGMENT.delay, minimum=0),
                                    loss=float(r.number("loss", Fraction(0), minimum=0)))))
        elif parts[0] == "host" and len(parts) == 2:
            host_sections.append((parts[1], cp[name]))
        else:
            errors.append(f"[{name}] unknown section")
    for a, b, _ in spec.links:
        for seg in (a, b):
            if seg not in spec.segments:
                errors.append(f"[link {a} {b}] unknown segment {seg}")

    # addresses follow section order within each segment
    per_segment: Dict[int, int] = {}
    readers: Dict[str, _Reader] = {}
    for name, section in host_sections:
        role_text = section.get("role")
        try:
            role = Role((role_text or "").strip())
        except ValueError:
            errors.append(f"[host {name}] role: {role_text!r} is not one of {', '.join(r.value for r in Role)}")
            continue
        r = _Reader(section, errors, _ROLE_KEYS[role])
        seg = r.integer("segment", required=True)
        if seg is None:
            continue
        if seg not in spec.segments:
            errors.append(f"[host {name}] segment: unknown segment {seg}")
            continue
        per_segment[seg] = per_segment.get(seg, 0) + 1
        if per_segment[seg] > 254:
            errors.append(f"[host {name}] segment {seg} is full")
            continue
        spec.hosts.append(HostSpec(name, role, seg, host_address(seg, per_segment[seg]),
                                   r.number("clock_offset", Fraction(0))))
        readers[name] = r

    names = {h.name: h for h in spec.hosts}

    def ref(r: _Reader, key: str, roles, required=True) -> Optional[HostSpec]:
        target = r.raw(key)
        if target is None:
            if required:
                r._err(key, "required")
            return None
        h = names.get(target.strip())
        if h is None:
            r._err(key, f"unknown host {target.strip()!r}")
        elif h.role not in roles:
            r._err(key, f"{h.name} is a {h.role.value}, expected {'/'.join(x.value for x in roles)}")
            return None
        return h

    broadcasters = spec.with_role(Role.BROADCAST_SERVER)
    if len(broadcasters) != 1:
        errors.append(f"exactly one broadcast_server is required, found {len(broadcasters)}")
    if not spec.with_role(Role.VICTIM_CLIENT):
        errors.append("at least one victim_client is required")
    servers = (Role.BROADCAST_SERVER, Role.UNICAST_SERVER)

    for h in spec.hosts:
        r = readers[h.name]
        if h.role in servers:
            interval = None
            start = Fraction(0)
            dest = None
            if h.role is Role.BROADCAST_SERVER:
                interval = r.number("broadcast_interval", Fraction(64), positive=True)
                start = r.number("broadcast_start", Fraction(0), minimum=0)
                dest = spec.multicast_group or broadcast_address(h.segment)
            try:
                limit = RateLimitPolicy(r.number("min_headway", Fraction(16), positive=True),
                                        r.integer("burst_allowance", 2, minimum=1),
                                        r.number("burst_window", Fraction(3), positive=True))
            except ValueError as exc:
                r._err("rate limit", str(exc))
                limit = RateLimitPolicy()
            try:
                h.server = ServerConfig(stratum=r.integer("stratum", 2), broadcast_interval=interval,
                                        broadcast_start=start, broadcast_destination=dest,
                                        keyring=spec.keys if spec.authentication else frozenset(),
                                        rate_limit=limit, kod_poll_exponent=r.integer("kod_poll", 6, minimum=0))
            except ValueError as exc:
                r._err("server", str(exc))
        elif h.role is Role.VICTIM_CLIENT:
            backup = ref(r, "backup_server", servers, required=False)
            trusted = None
            if r.raw("trusted_sources") is not None:
                trusted = set()
                for n in r.names("trusted_sources"):
                    if n not in names:
                        r._err("trusted_sources", f"unknown host {n!r}")
                    else:
                        trusted.add(names[n].address)
                trusted = frozenset(trusted)
            profile = BehaviorProfile(
                panic_behavior=r.choice("panic_behavior", PanicBehavior, PanicBehavior.RECALIBRATE_ON_PANIC),
                kod_nonce_check=r.boolean("kod_nonce_check", True),
                out_of_band_ppd=r.boolean("out_of_band_ppd", False),
                backup_unicast_server=backup.address if backup else None,
                trusted_broadcast_sources=trusted,
            )
            d = ClientConfig()
            try:
                config = ClientConfig(
                    poll=r.integer("poll", d.poll, minimum=0),
                    volley_size=r.integer("volley_size", d.volley_size, minimum=1),
                    volley_spacing=r.number("volley_spacing", d.volley_spacing, minimum=0),
                    volley_timeout=r.number("volley_timeout", d.volley_timeout, positive=True),
                    mobilization_delay=r.number("mobilization_delay", d.mobilization_delay, minimum=0),
                    recalibration_delay=r.number("recalibration_delay", d.recalibration_delay, minimum=0),
                    backup_poll=r.integer("backup_poll", d.backup_poll, minimum=0),
                    oob_interval=r.number("oob_interval", d.oob_interval, positive=True),
                    keyring=spec.keys if spec.authentication else frozenset(),
                )
            except ValueError as exc:
                r._err("client", str(exc))
                config = d
            h.victim = VictimSpec(profile, config)
        elif h.role is Role.PROBE_CLIENT:
            target = ref(r, "target", (Role.VICTIM_CLIENT,))
            h.probe = ProbeSpec(target.name if target else "", r.number("interval", spec.probe_interval, positive=True),
                                r.number("first_probe", None, minimum=0))
        elif h.role is Role.SLAVE:
            server = ref(r, "server", servers, required=False) or (broadcasters[0] if broadcasters else None)
            victim = ref(r, "victim", (Role.VICTIM_CLIENT,), required=False)
            if victim is None and spec.with_role(Role.VICTIM_CLIENT):
                victim = spec.with_role(Role.VICTIM_CLIENT)[0]
            h.slave = SlaveSpec(server.name if server else "", victim.name if victim else "",
                                r.number("forward_delay", Fraction(1), minimum=0),
                                r.number("capture_window", Fraction(600), positive=True))

    for h in spec.with_role(Role.ATTACKER):
        r = readers[h.name]
        kind = r.choice("position", AttackerKind, AttackerKind.OFF_PATH_UNAUTH)
        server = ref(r, "server", servers, required=False) or (broadcasters[0] if broadcasters else None)
        targets = []
        for n in r.names("targets") or [v.name for v in spec.with_role(Role.VICTIM_CLIENT)[:1]]:
            t = names.get(n)
            if t is None or t.role is not Role.VICTIM_CLIENT:
                r._err("targets", f"{n!r} is not a victim_client")
            else:
                targets.append(t.address)
        slave = ref(r, "slave", (Role.SLAVE,), required=False)
        if kind is AttackerKind.OFF_PATH_WITH_SLAVE and slave is None:
            r._err("slave", "position off_path_with_slave needs a slave host")
        if kind is not AttackerKind.OFF_PATH_WITH_SLAVE and slave is not None:
            r._err("slave", f"position {kind.value} does not use a slave")
        keyed = r.boolean("keyed", kind is AttackerKind.ON_PATH_KEYED)
        if keyed and kind is not AttackerKind.ON_PATH_KEYED:
            r._err("keyed", f"an attacker in position {kind.value} cannot hold the key")
        if not keyed and kind is AttackerKind.ON_PATH_KEYED:
            r._err("keyed", "position on_path_keyed implies keyed = true")
        if kind is AttackerKind.ON_PATH_KEYED and not spec.keys:
            r._err("position", "on_path_keyed needs [scenario] keys")
        try:
            schedule = AttackSchedule(
                r.number("start", Fraction(0), required=True, minimum=0),
                r.number("stop", Fraction(0), required=True, minimum=0),
                mode5_rate=r.number("mode5_rate", Fraction(1), positive=True),
                mode3_burst=r.integer("mode3_burst", 2, minimum=0),
                mode3_interval=r.number("mode3_interval", Fraction(10), positive=True),
                mode3_offset=r.number("mode3_offset", Fraction(4), minimum=0),
                displacement=r.number("displacement", Fraction(2000)),
                targets=targets,
                server=server.address if server else None,
            )
        except ValueError as exc:
            r._err("schedule", str(exc))
            continue
        if abs(schedule.displacement) <= PANIC_THRESHOLD and kind is not AttackerKind.OFF_PATH_WITH_SLAVE:
            spec.warnings.append(f"{h.name}: displacement {float(schedule.displacement):g} s does not exceed "
                                 f"the panic threshold; the attack is expected to fail")
        h.attacker = AttackerSpec(kind, schedule, slave.name if slave else None, keyed=keyed)

    if cp.has_section("policy"):
        r = _Reader(cp["policy"], errors, _POLICY_KEYS)
        spec.policy.ingress_filtering = r.boolean("ingress_filtering")
        for entry in [e.strip() for e in (r.raw("client_acl") or "").split(";") if e.strip()]:
            recipient, sep, allowed = entry.partition("=")
            if not sep or recipient.strip() not in names:
                r._err("client_acl", f"bad entry {entry!r} (expected host = trusted hosts)")
                continue
            trusted = []
            for n in allowed.replace(",", " ").split():
                if n not in names:
                    r._err("client_acl", f"unknown host {n!r}")
                else:
                    trusted.append(names[n].address)
            spec.policy.client_acl[names[recipient.strip()].address] = frozenset(trusted)

    if errors:
        raise ScenarioError(errors)
    return spec


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def resolve_seed(spec: ScenarioSpec, override: Optional[int] = None) -> int:
    """Explicit override, then the scenario's own seed, then $NTPSIM_SEED, then 0."""
    if override is not None:
        return override
    if spec.seed is not None:
        return spec.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ScenarioError([f"{SEED_ENV} must be an integer, got {env!r}"]) from None
    return 0


# -- assembly and execution --------------------------------------------------

@dataclass
class Verdict:
    outcome: Outcome
    attack_succeeded: bool
    victim: str
    attack_window: Optional[Tuple[Fraction, Fraction]]
    initial_sync: Optional[Fraction]
    desync_window: Optional[Tuple[Fraction, Optional[Fraction]]]
    resync_delay_after_stop: Optional[Fraction]
    calibration_attempts: int
    failed_attempts: int
    probes_in_window: int
    syncs_in_window: int
    max_sync_gap: Optional[Fraction]
    counts: Dict[str, Dict[str, object]]
    warnings: List[str] = field(default_factory=list)

    @property
    def desync_coverage(self) -> Optional[Fraction]:
        """Fraction of the attack window covered by the desync window."""
        if self.attack_window is None or self.desync_window is None:
            return None
        start, stop = self.attack_window
        lo = max(start, self.desync_window[0])
        hi = min(stop, self.desync_window[1] if self.desync_window[1] is not None else stop)
        return max(Fraction(0), hi - lo) / (stop - start)


@dataclass
class RunResult:
    spec: ScenarioSpec
    seed: int
    network: Network
    hosts: Dict[str, Host]
    timeline: Timeline
    verdict: Verdict


def build(spec: ScenarioSpec, seed: int) -> Tuple[Network, Dict[str, Host]]:
    net = Network(Simulator(), spec.policy, random.Random(seed), Timeline())
    for seg in sorted(spec.segments):
        net.add_segment(seg, spec.segments[seg])
    for a, b, link in spec.links:
        net.set_link(a, b, link)
    hosts: Dict[str, Host] = {}
    for hs in spec.hosts:
        clock = SimClock(hs.clock_offset)
        if hs.role in (Role.BROADCAST_SERVER, Role.UNICAST_SERVER):
            host = NtpServer(hs.name, hs.server, clock)
        elif hs.role is Role.VICTIM_CLIENT:
            host = NtpClient(hs.name, hs.victim.profile, hs.victim.config, clock)
        elif hs.role is Role.PROBE_CLIENT:
            host = ProbeClient(hs.name, spec.host(hs.probe.target).address, hs.probe.interval,
                               hs.probe.first_probe, clock)
        elif hs.role is Role.SLAVE:
            host = Slave(hs.name, spec.host(hs.slave.server).address, spec.host(hs.slave.victim).address,
                         forward_delay=hs.slave.forward_delay, capture_window=hs.slave.capture_window)
        else:
            host = None  # attackers need their slave first
        if host is not None:
            hosts[hs.name] = host
    for hs in spec.with_role(Role.ATTACKER):
        a = hs.attacker
        slave = hosts[a.slave] if a.slave else None
        position = AttackerPosition(a.kind, slave, spec.keys if a.keyed else frozenset())
        hosts[hs.name] = Attacker(hs.name, position, a.schedule, seed=seed, clock=SimClock(hs.clock_offset))
        if slave is not None:
            slave.master = hosts[hs.name]
    ordered = {hs.name: hosts[hs.name] for hs in spec.hosts}
    for hs in spec.hosts:
        addr = net.attach(ordered[hs.name], hs.segment)
        assert addr == hs.address, (addr, hs.address)
        if hs.role is Role.SLAVE:
            net.grant_sniff(ordered[hs.name])
    if spec.multicast_group is not None:
        for hs in spec.with_role(Role.VICTIM_CLIENT):
            net.subscribe_multicast(ordered[hs.name], spec.multicast_group)
    return net, ordered


def _verdict(spec: ScenarioSpec, net: Network, hosts: Dict[str, Host]) -> Verdict:
    probes = spec.with_role(Role.PROBE_CLIENT)
    victim_name = probes[0].probe.target if probes else spec.with_role(Role.VICTIM_CLIENT)[0].name
    victim: NtpClient = hosts[victim_name]
    attackers = spec.with_role(Role.ATTACKER)
    window = None
    if attackers:
        window = (min(a.attacker.schedule.start_time for a in attackers),
                  max(a.attacker.schedule.stop_time for a in attackers))
    syncs = victim.sync_times
    initial = syncs[0] if syncs else None

    counts: Dict[str, Dict[str, object]] = {}
    raw = net.counts()
    for hs in spec.hosts:
        c = raw.get(hs.name, {})
        counts[hs.name] = {"role": hs.role.value, "mode3": c.get("mode3", 0), "mode4": c.get("mode4", 0),
                           "mode5": c.get("mode5", 0), "kod": c.get("kod", 0)}

    warnings = list(spec.warnings)
    for h in hosts.values():
        warnings.extend(f"{h.name}: {w}" for w in getattr(h, "warnings", []))
    st = victim.state
    common = dict(victim=victim_name, initial_sync=initial, calibration_attempts=st.calibration_attempts,
                  failed_attempts=st.failed_attempts, counts=counts, warnings=warnings)
    if window is None:
        return Verdict(Outcome.BASELINE, False, attack_window=None, desync_window=None,
                       resync_delay_after_stop=None, probes_in_window=0, syncs_in_window=0,
                       max_sync_gap=None, **common)

    start, stop = window
    lo = max(start, initial) if initial is not None else start
    probe_host = hosts[probes[0].name] if probes else None
    in_window = [r for r in (probe_host.results if probe_host else []) if lo < r[0] < stop]
    syncs_in = [t for t in syncs if start < t < stop]

    desync = None
    for t, phase in victim.phase_history:
        if t >= start and phase is not Phase.SYNCED:
            after = [s for s in syncs if s > t]
            desync = (t, after[0] if after else None)
            break
    after_stop = [s for s in syncs if s >= stop]
    resync = after_stop[0] - stop if after_stop else None
    marks = [start] + syncs_in + [stop]
    max_gap = max(b - a for a, b in zip(marks, marks[1:]))

    if probe_host is None:
        outcome, succeeded = Outcome.INCONCLUSIVE, False
    else:
        succeeded = (initial is not None and len(in_window) >= 2
                     and len({r[1] for r in in_window}) == 1 and not syncs_in)
        outcome = Outcome.SUCCEEDED if succeeded else Outcome.FAILED
    return Verdict(outcome, succeeded, attack_window=window, desync_window=desync,
                   resync_delay_after_stop=resync, probes_in_window=len(in_window),
                   syncs_in_window=len(syncs_in), max_sync_gap=max_gap, **common)


def execute(spec: ScenarioSpec, seed: Optional[int] = None) -> RunResult:
    seed = resolve_seed(spec, seed)
    net, hosts = build(spec, seed)
    net.timeline.log(0, "scenario", "start", f"{spec.name} seed={seed}")
    for host in hosts.values():
        host.start()
    net.sim.run_until(spec.duration)
    net.timeline.log(spec.duration, "scenario", "end")
    verdict = _verdict(spec, net, hosts)
    return RunResult(spec, seed, net, hosts, net.timeline, verdict)


def run_scenario(spec: ScenarioSpec, seed: Optional[int] = None) -> Tuple[Timeline, Verdict]:
    result = execute(spec, seed)
    return result.timeline, result.verdict
