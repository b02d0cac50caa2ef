from fractions import Fraction

import pytest

from ntpsim import wire
from ntpsim.adversary import (AttackRefused, Attacker, AttackerKind, AttackerPosition, AttackSchedule,
                              CaptureTimeout, Slave, craft_panic_mode5, mode3_emission_times,
                              mode5_emission_times, slave_capture)
from ntpsim.client import BehaviorProfile, ClientConfig, NtpClient, Phase
from ntpsim.clock import Adjustment, SimClock, classify_offset
from ntpsim.server import NtpServer, ServerConfig
from ntpsim.simnet import Network, broadcast_address, host_address
from ntpsim.wire import MacStatus, NtpTimestamp, SymmetricKey

KEY = SymmetricKey(1, b"broadcast-secret")
SERVER = host_address(1, 1)
VICTIM = host_address(1, 2)

TESTBED = AttackSchedule(Fraction(93), Fraction(9023), targets=[VICTIM], server=SERVER)


class TestSchedule:
    def test_testbed_mode5_count(self):
        times = mode5_emission_times(TESTBED)
        assert len(times) == 9023 - 93 == 8930
        assert times[0] == 93 and times[-1] == 9022

    def test_testbed_mode3_count(self):
        times = mode3_emission_times(TESTBED)
        window = 9023 - 97
        assert len(times) == 2 + window // 10 == 894
        assert times[:3] == [97, 97, 107]
        assert times[-1] < 9023

    def test_fractional_rates(self):
        s = AttackSchedule(Fraction(0), Fraction(10), mode5_rate=Fraction(5, 2), mode3_burst=0,
                           mode3_interval=Fraction(3), mode3_offset=Fraction(0))
        assert len(mode5_emission_times(s)) == 25
        assert mode3_emission_times(s) == [3, 6, 9]

    def test_flood_starting_after_stop_is_empty(self):
        s = AttackSchedule(Fraction(0), Fraction(3), mode3_offset=Fraction(4))
        assert mode3_emission_times(s) == []

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackSchedule(Fraction(10), Fraction(10))
        with pytest.raises(ValueError):
            AttackSchedule(Fraction(0), Fraction(10), mode5_rate=Fraction(0))


class TestCraft:
    def victim_theta(self, pkt, victim_clock, arrival, ppd=Fraction(1, 1000)):
        return pkt.transmit_ts.to_seconds() + ppd - victim_clock.reading(arrival)

    def test_displacement_2000_is_panic(self):
        victim = SimClock(Fraction(1, 5))
        pkt = craft_panic_mode5(SERVER, SimClock().reading(100), displacement=2000)
        theta = self.victim_theta(pkt, victim, Fraction(10005, 100))
        assert abs(theta) > 1000
        assert classify_offset(theta) is Adjustment.PANIC

    def test_displacement_500_is_a_step(self):
        pkt = craft_panic_mode5(SERVER, SimClock().reading(100), displacement=500)
        assert classify_offset(self.victim_theta(pkt, SimClock(), Fraction(10005, 100))) is Adjustment.STEP

    def test_unauthenticated_packet(self):
        pkt = craft_panic_mode5(SERVER, Fraction(3786826000))
        assert pkt.mac is None and pkt.origin_ts.is_null and pkt.receive_ts.is_null
        assert pkt.reference_id == SERVER.packed

    def test_keyed_packet_verifies(self):
        pkt = craft_panic_mode5(SERVER, Fraction(3786826000), key=KEY)
        assert wire.verify_mac(pkt, {KEY}) is MacStatus.VALID

    def test_refused_without_key_on_keyed_network(self):
        with pytest.raises(AttackRefused):
            craft_panic_mode5(SERVER, Fraction(3786826000), require_auth=True)


class TestPosition:
    def test_on_path_needs_key(self):
        with pytest.raises(ValueError):
            AttackerPosition(AttackerKind.ON_PATH_KEYED)

    def test_slave_position_needs_slave_and_no_key(self):
        with pytest.raises(ValueError):
            AttackerPosition(AttackerKind.OFF_PATH_WITH_SLAVE)
        slave = Slave("s", SERVER, VICTIM)
        with pytest.raises(ValueError):
            AttackerPosition(AttackerKind.OFF_PATH_WITH_SLAVE, slave, frozenset({KEY}))
        assert AttackerPosition(AttackerKind.OFF_PATH_WITH_SLAVE, slave).slave_host is slave


def build_testbed(slave_segment=None, keyed=False, kind=AttackerKind.OFF_PATH_UNAUTH, schedule=None,
                  attacker_segment=2, profile=None, seed=0):
    net = Network()
    net.add_segment(1)
    net.add_segment(2)
    keys = frozenset({KEY}) if keyed else frozenset()
    server = NtpServer("server", ServerConfig(broadcast_interval=Fraction(64), broadcast_start=Fraction(22),
                                              broadcast_destination=broadcast_address(1), keyring=keys))
    victim = NtpClient("victim", profile, ClientConfig(keyring=keys), SimClock(Fraction(3, 10)))
    net.attach(server, 1)
    net.attach(victim, 1)
    hosts = [server, victim]
    slave = None
    if slave_segment is not None:
        slave = Slave("slave", server.address, victim.address)
        net.attach(slave, slave_segment)
        net.grant_sniff(slave)
        hosts.append(slave)
    attacker = None
    if schedule is not None:
        schedule.targets, schedule.server = [victim.address], server.address
        position = AttackerPosition(kind, slave, keys if kind is AttackerKind.ON_PATH_KEYED else frozenset())
        attacker = Attacker("attacker", position, schedule, seed=seed)
        net.attach(attacker, attacker_segment)
        if slave is not None:
            slave.master = attacker
        hosts.append(attacker)
    for h in hosts:
        h.start()
    return net, server, victim, slave, attacker


class TestSlave:
    def test_captures_on_broadcast_segment(self):
        net, server, victim, slave, _ = build_testbed(slave_segment=1)
        net.sim.run_until(64 + 32)
        pair = slave_capture(slave)
        assert wire.decode(pair.mode5_copy).mode == wire.Mode.BROADCAST
        assert wire.decode(pair.mode3_copy).mode == wire.Mode.CLIENT
        sent = {r.wire_bytes for r in net.records}
        assert pair.mode5_copy in sent and pair.mode3_copy in sent

    def test_times_out_without_visibility(self):
        net, _, _, slave, _ = build_testbed(slave_segment=2)
        net.sim.run_until(700)
        with pytest.raises(CaptureTimeout):
            slave_capture(slave)
        assert net.timeline.of_kind("capture-timeout", "slave")

    def test_captured_mac_stays_valid(self):
        net, _, _, slave, _ = build_testbed(slave_segment=1, keyed=True)
        net.sim.run_until(100)
        pair = slave_capture(slave)
        assert wire.verify_mac(wire.decode(pair.mode5_copy), {KEY}) is MacStatus.VALID
        assert wire.verify_mac(wire.decode(pair.mode3_copy), {KEY}) is MacStatus.VALID


class TestReplay:
    def run(self, start, stop=None):
        schedule = AttackSchedule(Fraction(start), Fraction(stop or start + 1000))
        net, server, victim, slave, attacker = build_testbed(slave_segment=1, keyed=True,
                                                             kind=AttackerKind.OFF_PATH_WITH_SLAVE, schedule=schedule)
        net.sim.run_until(schedule.stop_time)
        return net, server, victim, slave, attacker

    def test_replay_is_byte_identical(self):
        net, _, _, slave, attacker = self.run(2100)
        replayed = [r.wire_bytes for r in net.records if r.actual_sender == attacker.address]
        assert replayed
        assert set(replayed) == {slave.captured.mode5_copy, slave.captured.mode3_copy}

    def test_stale_replay_panics_victim(self):
        net, _, victim, slave, _ = self.run(2100)
        capture = slave.captured.capture_times[0]
        assert 2100 - capture > 1000
        panic = net.timeline.of_kind("panic", "victim")
        assert panic and float(panic[0].detail.split()[0].split("=")[1]) < -1000
        assert victim.state.phase is not Phase.SYNCED

    def test_replayed_queries_draw_kods(self):
        net, server, _, _, _ = self.run(2100)
        assert server.kods_sent > 50

    def test_early_replay_warns_and_fails(self):
        net, _, victim, _, attacker = self.run(500, 1500)
        assert attacker.warnings and "does not exceed" in attacker.warnings[0]
        # a young copy only steps the clock back; it never panics the victim by itself
        thetas = [float(e.detail.split()[0].split("=")[1]) for e in net.timeline.of_kind("panic", "victim")]
        assert all(t > 0 for t in thetas)
        assert net.timeline.of_kind("sync", "victim")


class TestDirectKod:
    def test_blocked_by_nonce_check(self):
        schedule = AttackSchedule(Fraction(5000), Fraction(5001))
        net, _, victim, _, attacker = build_testbed(schedule=schedule)
        net.sim.run_until(40)
        attacker.spoof_kod_directly(victim.address, host_address(1, 1))
        net.sim.run_until(41)
        assert victim.state.phase is Phase.SYNCED and victim.state.refrain_until is None

    def test_legacy_profile_falls_for_it(self):
        schedule = AttackSchedule(Fraction(5000), Fraction(5001))
        net, _, victim, _, attacker = build_testbed(schedule=schedule, profile=BehaviorProfile(kod_nonce_check=False))
        net.sim.run_until(40)
        attacker.spoof_kod_directly(victim.address, host_address(1, 1))
        net.sim.run_until(41)
        assert victim.state.phase is Phase.REFRAIN

    def test_on_path_attacker_with_sniffed_nonce_succeeds(self):
        schedule = AttackSchedule(Fraction(5000), Fraction(5001))
        net, server, victim, _, attacker = build_testbed(schedule=schedule, attacker_segment=1)
        net.grant_sniff(attacker)
        seen = []
        attacker.on_sniff = seen.append
        net.sniff(attacker, 1)
        net.sim.run_until(Fraction(24001, 1000))
        query = next(r for r in seen if r.label == "mode3")
        nonce = wire.decode(query.wire_bytes).transmit_ts
        attacker.spoof_kod_directly(victim.address, server.address, origin=nonce)
        net.sim.run_until(Fraction(24002, 1000))
        assert victim.state.phase is Phase.REFRAIN


class TestFlood:
    def test_off_path_timestamps_never_match_victim_queries(self):
        schedule = AttackSchedule(Fraction(93), Fraction(2000))
        net, _, victim, _, attacker = build_testbed(schedule=schedule)
        net.sim.run_until(2000)
        forged = {wire.decode(r.wire_bytes).transmit_ts for r in net.records
                  if r.actual_sender == attacker.address and r.label == "mode3"}
        genuine = {wire.decode(r.wire_bytes).transmit_ts for r in net.records
                   if r.actual_sender == victim.address and r.label == "mode3"}
        assert forged and genuine and not forged & genuine

    def test_emission_counts_match_schedule(self):
        schedule = AttackSchedule(Fraction(93), Fraction(1093))
        net, *_ = build_testbed(schedule=schedule)
        net.sim.run_until(2000)
        counts = net.counts()["attacker"]
        assert counts["mode5"] == len(mode5_emission_times(schedule)) == 1000
        assert counts["mode3"] == len(mode3_emission_times(schedule))

    def test_nothing_after_stop(self):
        schedule = AttackSchedule(Fraction(93), Fraction(300))
        net, *_ = build_testbed(schedule=schedule)
        net.sim.run_until(1000)
        assert max(t for _, t, s, _ in net.transmissions if s == "attacker") < 300

    def test_same_seed_same_emissions(self):
        def emissions(seed):
            schedule = AttackSchedule(Fraction(93), Fraction(400))
            net, *_ = build_testbed(schedule=schedule, seed=seed)
            net.sim.run_until(400)
            return [(r.send_time, r.wire_bytes) for r in net.records if r.label == "mode3"]

        assert emissions(3) == emissions(3)
        assert emissions(3) != emissions(4)
