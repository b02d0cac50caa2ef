import hashlib
import random
import struct
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntpsim import wire
from ntpsim.wire import (MacStatus, MalformedPacket, Mode, NtpPacket, NtpTimestamp, PacketError,
                         SymmetricKey)

from md5_oracle import md5

KEY = SymmetricKey(1, b"broadcast-secret")
OTHER = SymmetricKey(2, b"something-else")

u32 = st.integers(0, 2 ** 32 - 1)
ts = st.builds(NtpTimestamp, u32, u32)


@st.composite
def packets(draw, signed=None):
    mode = draw(st.sampled_from(list(Mode)))
    kw = dict(
        mode=mode,
        leap=draw(st.integers(0, 3)),
        stratum=draw(st.integers(0, 16)),
        poll=draw(st.integers(-128, 127)),
        precision=draw(st.integers(-128, 127)),
        root_delay=draw(u32),
        root_dispersion=draw(u32),
        reference_id=draw(st.binary(min_size=4, max_size=4)),
        reference_ts=draw(ts),
        transmit_ts=draw(ts),
    )
    if mode != Mode.BROADCAST:
        kw["origin_ts"] = draw(ts)
        kw["receive_ts"] = draw(ts)
    pkt = NtpPacket(**kw)
    if signed is None:
        signed = draw(st.booleans())
    if signed:
        pkt = wire.sign(pkt, draw(st.sampled_from([KEY, OTHER])))
    return pkt


def oracle_header(pkt):
    """Byte layout written out field by field, independent of the codec's struct format."""
    out = bytes([(pkt.leap << 6) | (pkt.version << 3) | int(pkt.mode), pkt.stratum,
                 pkt.poll & 0xFF, pkt.precision & 0xFF])
    out += pkt.root_delay.to_bytes(4, "big") + pkt.root_dispersion.to_bytes(4, "big") + pkt.reference_id
    for t in (pkt.reference_ts, pkt.origin_ts, pkt.receive_ts, pkt.transmit_ts):
        out += t.seconds.to_bytes(4, "big") + t.fraction.to_bytes(4, "big")
    return out


class TestTimestamp:
    def test_from_seconds_floors_to_the_tick(self):
        t = NtpTimestamp.from_seconds(Fraction(3, 2))
        assert (t.seconds, t.fraction) == (1, 2 ** 31)
        assert NtpTimestamp.from_seconds(Fraction(1, 2 ** 33)) == wire.NULL_TS

    def test_dyadic_values_round_trip_exactly(self):
        v = Fraction(3786825600) + Fraction(12345, 2 ** 20)
        assert NtpTimestamp.from_seconds(v).to_seconds() == v

    def test_out_of_range(self):
        with pytest.raises(PacketError):
            NtpTimestamp.from_seconds(-1)
        with pytest.raises(PacketError):
            NtpTimestamp.from_seconds(2 ** 32)

    @given(st.integers(0, 2 ** 64 - 1))
    def test_int_round_trip(self, raw):
        assert NtpTimestamp.from_int(raw).to_int() == raw

    def test_ordering_follows_time(self):
        assert NtpTimestamp(1, 5) < NtpTimestamp(2, 0) < NtpTimestamp(2, 1)


class TestCodec:
    def test_client_query_first_byte(self):
        data = wire.encode(NtpPacket(mode=Mode.CLIENT))
        assert len(data) == 48 and data[0] == 0x23

    def test_header_matches_field_layout(self):
        pkt = NtpPacket(mode=Mode.SERVER, leap=1, stratum=2, poll=-6, precision=-20, root_delay=7,
                        root_dispersion=9, reference_id=b"GPS\x00", reference_ts=NtpTimestamp(10, 11),
                        origin_ts=NtpTimestamp(12, 13), receive_ts=NtpTimestamp(14, 15),
                        transmit_ts=NtpTimestamp(16, 17))
        assert wire.encode(pkt) == oracle_header(pkt)

    def test_mac_trailer_layout(self):
        pkt = wire.sign(NtpPacket(mode=Mode.BROADCAST, stratum=2), KEY)
        data = wire.encode(pkt)
        assert len(data) == 68
        assert struct.unpack("!I", data[48:52])[0] == 1
        assert data[52:] == pkt.mac.digest

    @given(packets())
    @settings(max_examples=500)
    def test_round_trip(self, pkt):
        assert wire.decode(wire.encode(pkt)) == pkt

    @pytest.mark.parametrize("length", [0, 47, 49, 67, 69, 100])
    def test_bad_lengths(self, length):
        with pytest.raises(MalformedPacket):
            wire.decode(bytes(length))

    @pytest.mark.parametrize("mode", [0, 6, 7])
    def test_unsupported_modes_rejected(self, mode):
        data = bytearray(wire.encode(NtpPacket(mode=Mode.CLIENT)))
        data[0] = (data[0] & 0xF8) | mode
        with pytest.raises(MalformedPacket):
            wire.decode(bytes(data))

    def test_wrong_version_rejected(self):
        data = bytearray(wire.encode(NtpPacket(mode=Mode.CLIENT)))
        data[0] = (3 << 3) | 3
        with pytest.raises(MalformedPacket):
            wire.decode(bytes(data))

    def test_stratum_above_16_rejected(self):
        data = bytearray(wire.encode(NtpPacket(mode=Mode.CLIENT)))
        data[1] = 17
        with pytest.raises(MalformedPacket):
            wire.decode(bytes(data))

    def test_broadcast_with_origin_cannot_be_encoded(self):
        with pytest.raises(PacketError):
            wire.encode(NtpPacket(mode=Mode.BROADCAST, origin_ts=NtpTimestamp(1, 0)))

    def test_broadcast_with_receive_is_rejected_on_decode(self):
        good = NtpPacket(mode=Mode.SERVER, receive_ts=NtpTimestamp(5, 0))
        data = bytearray(wire.encode(good))
        data[0] = (data[0] & 0xF8) | 5
        with pytest.raises(MalformedPacket):
            wire.decode(bytes(data))

    def test_mode_of_and_describe(self):
        q = wire.encode(NtpPacket(mode=Mode.CLIENT))
        assert wire.mode_of(q) == 3
        assert wire.mode_of(b"ECHO?1") is None
        assert wire.describe(q) == "mode3"
        assert wire.describe(wire.encode(wire.make_kod(6, NtpTimestamp(1, 2)))) == "kod"
        assert wire.describe(b"\x00" * 48) == "malformed"


class TestMac:
    def test_digest_matches_reference_md5(self):
        header = wire.encode_header(NtpPacket(mode=Mode.BROADCAST, stratum=2, transmit_ts=NtpTimestamp(99, 1)))
        mac = wire.compute_mac(header, KEY)
        assert mac.digest == md5(KEY.secret + header)

    def test_oracle_agrees_with_published_vectors(self):
        assert md5(b"").hex() == "d41d8cd98f00b204e9800998ecf8427e"
        assert md5(b"abc").hex() == "900150983cd24fb0d6963f7d28e17f72"
        rng = random.Random(3)
        for n in (55, 56, 63, 64, 65, 200):
            data = rng.randbytes(n)
            assert md5(data) == hashlib.md5(data).digest()

    def test_signed_packet_verifies(self):
        pkt = wire.sign(NtpPacket(mode=Mode.BROADCAST, stratum=2), KEY)
        assert wire.verify_mac(pkt, {KEY}) is MacStatus.VALID
        assert wire.verify_mac(wire.decode(wire.encode(pkt)), {KEY, OTHER}) is MacStatus.VALID

    def test_unsigned_is_unauthenticated(self):
        assert wire.verify_mac(NtpPacket(mode=Mode.CLIENT), {KEY}) is MacStatus.UNAUTHENTICATED

    def test_unknown_key_id_is_invalid(self):
        pkt = wire.sign(NtpPacket(mode=Mode.CLIENT), OTHER)
        assert wire.verify_mac(pkt, {KEY}) is MacStatus.INVALID

    def test_same_id_different_secret_is_invalid(self):
        pkt = wire.sign(NtpPacket(mode=Mode.CLIENT), SymmetricKey(1, b"guess"))
        assert wire.verify_mac(pkt, {KEY}) is MacStatus.INVALID

    @given(packets(signed=True), st.integers(0, 67), st.integers(1, 255))
    @settings(max_examples=300)
    def test_any_flipped_byte_breaks_verification(self, pkt, index, flip):
        data = bytearray(wire.encode(pkt))
        data[index] ^= flip
        try:
            tampered = wire.decode(bytes(data))
        except MalformedPacket:
            return
        assert wire.verify_mac(tampered, {KEY, OTHER}) is not MacStatus.VALID

    def test_key_validation(self):
        with pytest.raises(ValueError):
            SymmetricKey(0, b"x")
        with pytest.raises(ValueError):
            SymmetricKey(1, b"")
        with pytest.raises(ValueError):
            SymmetricKey(1, b"x" * 65)


class TestKod:
    def test_fields(self):
        origin = NtpTimestamp(3786825700, 77)
        kod = wire.make_kod(6, origin)
        assert kod.stratum == 0 and kod.kiss_code == "RATE" and kod.is_kod
        assert kod.leap == 3 and kod.poll == 6 and kod.poll_interval == 64
        assert kod.origin_ts == origin

    def test_negative_poll_refused(self):
        with pytest.raises(PacketError):
            wire.make_kod(-1, wire.NULL_TS)

    def test_ordinary_reply_is_not_a_kod(self):
        assert not NtpPacket(mode=Mode.SERVER, stratum=2).is_kod
